import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bridgelab.autograd import Tensor
from bridgelab.backbone import NetConfig, StagedNetwork
from bridgelab.errors import DomainError
from bridgelab.mgm import adain, channel_stats, consistency_loss, make_mirrors, prediction_dist
from bridgelab.numerics import grad_check


def _floored(rng, shape, floor=0.1):
    """Random map whose every channel has spatial std of at least ``floor``."""
    g = rng.normal(size=shape) * rng.uniform(0.5, 3, size=shape[-1]) + rng.normal(size=shape[-1])
    std = g.std(axis=(-3, -2), keepdims=True)
    return np.where(std < floor, g * floor / np.maximum(std, 1e-12), g)


def test_channel_stats_examples(rng):
    s = channel_stats(np.full((2, 3, 2), 4.0))
    np.testing.assert_array_equal(s.mean, 4.0)
    np.testing.assert_array_equal(s.std, 0.0)
    s = channel_stats(np.array([[[1.0]], [[3.0]]]))
    assert (s.mean[0], s.std[0]) == (2.0, 1.0)
    g = rng.normal(size=(4, 4, 3))
    t = channel_stats(1.5 - 2.0 * g)
    np.testing.assert_allclose(t.mean, 1.5 - 2.0 * channel_stats(g).mean)
    np.testing.assert_allclose(t.std, 2.0 * channel_stats(g).std)
    with pytest.raises(DomainError):
        channel_stats(np.zeros((0, 2, 3)))


@pytest.mark.parametrize("seed", range(20))
def test_adain_identity(seed):
    g = _floored(np.random.default_rng(seed), (4, 4, 8))
    np.testing.assert_allclose(adain(g, g), g, atol=1e-6, rtol=0)


def test_style_post_condition_many_pairs(rng):
    for _ in range(1000):
        c, s = _floored(rng, (4, 4, 3)), _floored(rng, (4, 4, 3))
        out, st_ = channel_stats(adain(c, s)), channel_stats(s)
        assert np.abs(out.mean - st_.mean).max() < 1e-6
        assert np.abs(out.std - st_.std).max() < 1e-6


def test_normalized_content_preserved(rng):
    c, s = _floored(rng, (3, 4, 4, 5)), _floored(rng, (3, 4, 4, 5))
    norm = lambda g: (g - g.mean(axis=(1, 2), keepdims=True)) / g.std(axis=(1, 2), keepdims=True)
    np.testing.assert_allclose(norm(adain(c, s)), norm(c), atol=1e-6)


def test_adain_constant_channel_is_finite():
    out = adain(np.ones((2, 2, 2)), np.arange(8.0).reshape(2, 2, 2))
    assert np.isfinite(out).all()


def test_mirrors_at_endpoint_and_stats(rng):
    gs, gt = _floored(rng, (3, 4, 4, 4)), _floored(rng, (3, 4, 4, 4))
    ms, mt = make_mirrors(gs, gt, gs)
    np.testing.assert_allclose(ms, gs, atol=1e-6)
    gi = 0.3 * gs + 0.7 * gt
    ms, mt = make_mirrors(gs, gt, gi)
    for m in (ms, mt):
        np.testing.assert_allclose(channel_stats(m).mean, channel_stats(gi).mean, atol=1e-6)
        np.testing.assert_allclose(channel_stats(m).std, channel_stats(gi).std, atol=1e-6)
    ms, none = make_mirrors(gs, None, gi)
    assert none is None
    with pytest.raises(DomainError):
        make_mirrors(gs[:2], gt, gi)


def test_prediction_distribution(rng):
    net = StagedNetwork(NetConfig(n_source=4))
    g = net.forward_to_stage(rng.normal(size=(3, 8, 8, 4)), 3).data
    p = prediction_dist(net, g, 3, "inter")
    np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-9)
    flat = prediction_dist(net, g, 3, "inter", tau=1e9).data
    assert np.abs(flat - 0.25).max() < 1e-6


def test_consistency_examples():
    p = np.array([[0.75, 0.25]])
    q = np.array([[0.25, 0.75]])
    assert consistency_loss(p, p, p, p) == 0.0
    assert consistency_loss(p, q, tau=1.0) == pytest.approx(math.log(3), abs=1e-6)
    assert consistency_loss(p, q, tau=0.5) == pytest.approx(0.25 * math.log(3), abs=1e-6)


@given(st.integers(0, 10_000))
def test_consistency_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p, q, r, s = (rng.dirichlet(np.ones(4), size=5) for _ in range(4))
    a = consistency_loss(p, q, r, s)
    assert a >= 0
    assert a == pytest.approx(consistency_loss(q, p, s, r), abs=1e-12)


def test_consistency_gradient_flows_into_both_adain_arguments(rng):
    c = Tensor(_floored(rng, (2, 3, 3, 4)), requires_grad=True)
    s = Tensor(_floored(rng, (2, 3, 3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 3))
    from bridgelab.numerics import softmax_temp

    def loss():
        mirror = adain(c, s)
        p = softmax_temp(c.mean(axis=(1, 2)) @ w, 0.5)
        q = softmax_temp(mirror.mean(axis=(1, 2)) @ w + 0.1 * (mirror * mirror).mean(axis=(1, 2)) @ w, 0.5)
        return consistency_loss(p, q, tau=0.5)

    assert grad_check(loss, [c, s], step=1e-6).max_rel_err < 1e-4
    loss().backward()
    assert np.abs(s.grad).sum() > 0
