import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bridgelab.errors import DomainError
from bridgelab.evaluation import (distribution_overlap, evaluate_retrieval, histogram,
                                  histogram_csv, map_cmc, pairwise_distance_samples,
                                  positive_negative_distances)

from oracles import brute_ap, retrieval_instances


def test_map_matches_brute_force():
    for q, g, ql, gl in retrieval_instances():
        got, _ = map_cmc(q, g, ql, gl)
        assert got == pytest.approx(brute_ap(q, g, ql, gl), abs=1e-12)


def test_ap_hand_cases():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.01], [1.0, 0.5], [1.0, 0.9]])
    m, cmc = map_cmc(q, g, [1], [1, 0, 1], ranks=(1, 2))
    assert m == (1 + 2 / 3) / 2
    assert m == pytest.approx(5 / 6, rel=1e-15)
    assert cmc == {1: 1.0, 2: 1.0}
    m, cmc = map_cmc(q, g[:1], [1], [1])
    assert m == 1.0 and cmc[1] == 1.0


def test_self_match_exclusion(rng):
    emb = rng.normal(size=(6, 4))
    assert evaluate_retrieval(emb, np.arange(6))["mAP"] == 0.0
    twin = np.vstack([emb, emb + 1e-6])
    labels = np.concatenate([np.arange(6), np.arange(6)])
    out = evaluate_retrieval(twin, labels)
    assert out["mAP"] == 1.0 and out["rank1"] == 1.0


@given(st.integers(0, 10_000))
def test_retrieval_invariant_to_rotation_and_scale(seed):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(12, 4))
    labels = np.repeat(np.arange(4), 3)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = evaluate_retrieval(emb, labels)
    b = evaluate_retrieval(3.0 * emb @ q, labels)
    assert a["mAP"] == pytest.approx(b["mAP"], abs=1e-9)
    assert 0.0 <= a["mAP"] <= 1.0


def test_distance_samples(rng):
    p = np.array([[0.0, 2.0]])
    np.testing.assert_array_equal(pairwise_distance_samples(p, p, 5, 0), 0.0)
    d = pairwise_distance_samples(rng.normal(size=(7, 3)), rng.normal(size=(9, 3)), 500, 3)
    assert (d >= 0).all() and (d <= 2 + 1e-12).all()
    pos, neg = positive_negative_distances(rng.normal(size=(10, 3)), np.repeat(np.arange(5), 2), 50, 1)
    assert pos.shape == neg.shape == (50,)
    with pytest.raises(DomainError):
        positive_negative_distances(rng.normal(size=(3, 3)), [0, 1, 2], 5, 0)


def test_distance_samples_are_seeded(rng):
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(9, 3))
    np.testing.assert_array_equal(pairwise_distance_samples(a, b, 100, 5),
                                  pairwise_distance_samples(a, b, 100, 5))


def test_overlap_examples():
    h = np.array([0.2, 0.3, 0.5])
    assert distribution_overlap(h, h) == pytest.approx(1.0)
    assert distribution_overlap([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert distribution_overlap([0.5, 0.5, 0.0], [0.0, 0.5, 0.5]) == 0.5
    with pytest.raises(DomainError):
        distribution_overlap([1.0], [0.5, 0.5])


def test_histogram_and_csv(rng):
    mass, edges = histogram(rng.uniform(0, 2, 1000))
    assert mass.sum() == pytest.approx(1.0) and len(edges) == len(mass) + 1
    rows = list(csv.reader(io.StringIO(histogram_csv(mass, edges))))
    assert rows[0] == ["bin_left", "bin_right", "mass"]
    assert [float(r[2]) for r in rows[1:]] == mass.tolist()
