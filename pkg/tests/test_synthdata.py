import os

import numpy as np
import pytest

from bridgelab.errors import DomainError, ParseError
from bridgelab.mgm import channel_stats
from bridgelab.synthdata import (MANIFEST_NAME, Dataset, DomainSpec, default_specs,
                                 generate_domain, read_manifest, texture, write_manifest)


def plain(domain_id, bias=0.0, gain=1.0):
    return DomainSpec(domain_id, np.full(4, gain), np.full(4, bias), 0.0, 0.0)


def test_same_seed_is_bitwise_identical():
    spec = default_specs(5)[0]
    a, b = generate_domain(5, 3, 2, spec), generate_domain(5, 3, 2, spec)
    assert a == b
    assert not np.array_equal(a.images, generate_domain(6, 3, 2, spec).images)


def test_style_free_domains_agree():
    a = generate_domain(0, 3, 2, plain(0))
    b = generate_domain(0, 3, 2, plain(1))
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.images[0], a.images[1])


def test_bias_shift_moves_channel_means_exactly():
    a = generate_domain(0, 2, 2, plain(0, bias=0.0)).images.astype(np.float64)
    b = generate_domain(0, 2, 2, plain(1, bias=0.75)).images.astype(np.float64)
    diff = channel_stats(b).mean - channel_stats(a).mean
    np.testing.assert_allclose(diff, 0.75, atol=1e-6)


def test_invalid_counts_and_specs():
    with pytest.raises(DomainError):
        generate_domain(0, 1, 2, plain(0))
    with pytest.raises(DomainError):
        DomainSpec(0, np.array([1.0, -1.0]), np.zeros(2))


def test_manifest_round_trip(tmp_path):
    ds = generate_domain(2, 3, 2, default_specs(2)[1], id_offset=10)
    write_manifest(ds, tmp_path)
    back = read_manifest(tmp_path)
    assert back == ds
    assert back.identities.tolist() == ds.identities.tolist()


def test_empty_manifest(tmp_path):
    write_manifest(Dataset([]), tmp_path)
    assert len(read_manifest(tmp_path)) == 0


def test_truncated_manifest_reports_line(tmp_path):
    write_manifest(generate_domain(0, 2, 2, plain(0)), tmp_path)
    path = os.path.join(tmp_path, MANIFEST_NAME)
    text = open(path).read()
    open(path, "w").write(text[:-3])
    with pytest.raises(ParseError) as info:
        read_manifest(tmp_path)
    assert info.value.line is not None and str(info.value).startswith("line ")


def test_manifest_bad_field(tmp_path):
    write_manifest(generate_domain(0, 2, 2, plain(0)), tmp_path)
    path = os.path.join(tmp_path, MANIFEST_NAME)
    lines = open(path).read().split("\n")
    lines[2] = "x,0,0"
    open(path, "w").write("\n".join(lines))
    with pytest.raises(ParseError) as info:
        read_manifest(tmp_path)
    assert info.value.line == 3


def _unstyle(img, spec, seed):
    """Invert a domain's gain, bias and texture, leaving prototype plus noise."""
    return (img.astype(np.float64) - spec.bias) / spec.gain - spec.texture_scale * texture(
        seed, spec.domain_id)


def test_identity_content_correlates_across_domains():
    for seed in range(5):
        specs = default_specs(seed, 2, noise_std=0.05)
        a, b = (generate_domain(seed, 10, 2, s) for s in specs)
        for x, y in zip(a.images, b.images):
            cx, cy = _unstyle(x, specs[0], seed), _unstyle(y, specs[1], seed)
            assert np.corrcoef(cx.ravel(), cy.ravel())[0, 1] > 0.9


def test_domains_separable_from_style_statistics():
    specs = default_specs(0, 2)
    data = [generate_domain(0, 30, 8, s, id_offset=30 * d) for d, s in enumerate(specs)]
    feats, labels = [], []
    for d, ds in enumerate(data):
        st = channel_stats(ds.images.astype(np.float64))
        feats.append(np.hstack([st.mean, st.std]))
        labels.append(np.full(len(ds), d))
    x = np.vstack(feats)
    x = np.hstack([x, np.ones((len(x), 1))])
    y = np.concatenate(labels) * 2.0 - 1
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    assert np.mean(np.sign(x @ w) == y) >= 0.95
