import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bridgelab.autograd import Tensor
from bridgelab.errors import DomainError
from bridgelab.idm import (MixRatio, RatioPredictor, bridge_feat_loss, bridge_pred_loss,
                           diversity_loss, mix_features, predict_ratios, sample_beta_ratios)
from bridgelab.numerics import grad_check, population_std


@pytest.fixture
def predictor(rng):
    return RatioPredictor(8, rng, reduction=2)


def test_predict_ratios_single_pair_is_mixratio(predictor, rng):
    a = predict_ratios(predictor, rng.normal(size=(4, 4, 8)), rng.normal(size=(4, 4, 8)))
    assert isinstance(a, MixRatio)
    assert abs(a.a_s + a.a_t - 1) < 1e-9


def test_swap_symmetry_is_exact(predictor, rng):
    gs, gt = rng.normal(size=(5, 4, 4, 8)), rng.normal(size=(5, 4, 4, 8))
    np.testing.assert_array_equal(predict_ratios(predictor, gs, gt).data,
                                  predict_ratios(predictor, gt, gs).data)


def test_zero_final_layer_gives_half(predictor, rng):
    predictor.fc3.weight.data[...] = 0.0
    predictor.fc3.bias.data[...] = 0.0
    a = predict_ratios(predictor, rng.normal(size=(4, 4, 8)), rng.normal(size=(4, 4, 8)))
    assert (a.a_s, a.a_t) == (0.5, 0.5)


def test_shape_mismatch_rejected(predictor, rng):
    with pytest.raises(DomainError):
        predict_ratios(predictor, rng.normal(size=(4, 4, 8)), rng.normal(size=(2, 4, 8)))


def test_mixratio_validation():
    with pytest.raises(DomainError):
        MixRatio(0.6, 0.6)
    with pytest.raises(DomainError):
        MixRatio(-0.1, 1.1)


def test_mix_endpoints_and_linearity(rng):
    gs, gt = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
    ys, yt = np.eye(6)[0], np.eye(6)[5]
    g, y = mix_features(gs, gt, MixRatio(1.0, 0.0), ys, yt)
    np.testing.assert_array_equal(g, gs)
    np.testing.assert_array_equal(y, ys)
    g, _ = mix_features(np.full((2, 2, 1), 2.0), np.full((2, 2, 1), 4.0), MixRatio(0.5, 0.5))
    np.testing.assert_array_equal(g, 3.0)
    _, y = mix_features(gs, gt, MixRatio(0.7, 0.3), ys, yt)
    assert y[0] == pytest.approx(0.7) and y[5] == pytest.approx(0.3)
    assert y.sum() == pytest.approx(1.0)


def test_mix_rejects_off_simplex(rng):
    with pytest.raises(DomainError):
        mix_features(rng.normal(size=(2, 2, 1)), rng.normal(size=(2, 2, 1)),
                     np.array([0.7, 0.7]))


def test_diversity_examples():
    assert diversity_loss([MixRatio(0.5, 0.5)] * 3) == 0.0
    assert diversity_loss(np.array([[0.0, 1.0], [1.0, 0.0]])) == -1.0
    with pytest.raises(DomainError):
        diversity_loss(np.zeros((0, 2)))


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1)))
def test_diversity_is_twice_source_std(a_s):
    ratios = np.stack([a_s, 1 - a_s], axis=1)
    val = diversity_loss(ratios)
    assert -1.0 - 1e-12 <= val <= 0.0
    assert abs(val + 2 * population_std(a_s)) < 1e-12


def test_diversity_minimum_by_exhaustive_search():
    grid = np.round(np.linspace(0, 1, 11), 10)
    best, argbest = np.inf, []
    for batch in itertools.product(grid, repeat=4):
        a = np.array(batch)
        v = diversity_loss(np.stack([a, 1 - a], axis=1))
        if v < best - 1e-12:
            best, argbest = v, [batch]
        elif abs(v - best) <= 1e-12:
            argbest.append(batch)
    assert best == pytest.approx(-1.0)
    for batch in argbest:
        assert sorted(batch) == [0.0, 0.0, 1.0, 1.0]


def test_bridge_pred_examples():
    p = np.zeros((1, 4))
    p[0, 1] = 1.0
    assert bridge_pred_loss(p, [1], [2], np.array([[1.0, 0.0]])) == pytest.approx(0.0)
    uni = np.full((3, 5), 0.2)
    a = np.array([[0.2, 0.8], [0.5, 0.5], [1.0, 0.0]])
    assert bridge_pred_loss(uni, [0, 1, 2], [3, 4, 0], a) == pytest.approx(math.log(5))
    p = np.array([[0.5, 0.25, 0.25]])
    val = bridge_pred_loss(p, np.eye(3)[[0]], np.eye(3)[[1]], np.array([[0.7, 0.3]]))
    assert val == pytest.approx(-(0.7 * math.log(0.5) + 0.3 * math.log(0.25)), abs=1e-12)
    assert val == pytest.approx(0.9011, abs=1e-4)


def test_bridge_pred_zero_probability_is_finite():
    p = np.array([[1.0, 0.0]])
    assert np.isfinite(bridge_pred_loss(p, [1], [1], np.array([[0.5, 0.5]])))


def test_bridge_feat_examples(rng):
    f = rng.normal(size=(3, 4))
    assert bridge_feat_loss(f, f, f, np.full((3, 2), 0.5)) == 0.0
    fs, ft, fi = rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    assert bridge_feat_loss(fs, ft, fi, np.array([[0.0, 1.0]])) == pytest.approx(
        np.linalg.norm(ft - fi))
    assert bridge_feat_loss(np.array([[0.0]]), np.array([[2.0]]), np.array([[1.0]]),
                            np.array([[0.5, 0.5]])) == 1.0
    with pytest.raises(DomainError):
        bridge_feat_loss(np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 2)),
                         np.array([[0.5, 0.5]]))


def test_bridge_feat_gradient_is_weighted_unit_directions(rng):
    fs, ft = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    fi = Tensor(rng.normal(size=(1, 5)), requires_grad=True)
    a = np.array([[0.3, 0.7]])
    bridge_feat_loss(fs, ft, fi, a).backward()
    u_s = (fi.data - fs) / np.linalg.norm(fi.data - fs)
    u_t = (fi.data - ft) / np.linalg.norm(fi.data - ft)
    np.testing.assert_allclose(fi.grad, 0.3 * u_s + 0.7 * u_t, atol=1e-12)


def test_idm_losses_differentiate_through_the_predictor(predictor, rng):
    gs, gt = rng.normal(size=(6, 4, 4, 8)), rng.normal(size=(6, 4, 4, 8))
    probs = rng.dirichlet(np.ones(5), size=6)
    fs, ft, fi = (rng.normal(size=(6, 3)) for _ in range(3))
    ys, yt = rng.integers(0, 5, 6), rng.integers(0, 5, 6)
    params = predictor.parameters()
    for fn in (lambda a: diversity_loss(a), lambda a: bridge_pred_loss(probs, ys, yt, a),
               lambda a: bridge_feat_loss(fs, ft, fi, a)):
        report = grad_check(lambda: fn(predict_ratios(predictor, gs, gt)), params, step=1e-6)
        assert report.max_rel_err < 1e-4


def test_simplex_closure_on_many_inputs(predictor, rng):
    gs = rng.normal(size=(10_000, 2, 2, 8)) * rng.uniform(0.1, 10, size=(10_000, 1, 1, 1))
    gt = rng.normal(size=(10_000, 2, 2, 8))
    a = predict_ratios(predictor, gs, gt).data
    assert ((a >= 0) & (a <= 1)).all()
    assert np.abs(a.sum(axis=1) - 1).max() < 1e-9


def test_beta_ratios_on_simplex(rng):
    a = sample_beta_ratios(rng, 100, 0.5)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)
