"""Mirror generation: restyling hidden maps with intermediate-domain channel
statistics, and the temperature-scaled symmetric-KL consistency loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import DomainError
from .numerics import _out, kl_divergence, softmax_temp

ADAIN_EPS = 1e-5


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray


def _spatial_moments(g):
    if g.ndim < 3:
        raise DomainError(f"expected an (H, W, C) map, got shape {g.shape}")
    if g.shape[-3] * g.shape[-2] < 1:
        raise DomainError("empty spatial extent")
    axes = (g.ndim - 3, g.ndim - 2)
    mu = g.mean(axis=axes, keepdims=True)
    centered = g - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    return mu, centered, var


def channel_stats(g):
    """Per-channel spatial mean and population std of one map or a batch."""
    gt = ag.as_tensor(g)
    mu, _, var = _spatial_moments(gt)
    axes = (gt.ndim - 3, gt.ndim - 2)
    return FeatureStats(
        mean=np.squeeze(mu.data, axis=axes),
        std=np.sqrt(np.squeeze(var.data, axis=axes)),
    )


def adain(content, style, eps=ADAIN_EPS):
    """Give ``content`` the per-channel mean/std of ``style``.

    The content std is guarded as sqrt(var + eps^2), which leaves any channel
    with std well above eps exact to ~(eps/std)^2 and keeps constant channels
    finite.
    """
    c, s = ag.as_tensor(content), ag.as_tensor(style)
    if c.shape != s.shape:
        raise DomainError(f"content {c.shape} and style {s.shape} differ")
    mu_c, centered, var_c = _spatial_moments(c)
    mu_s, _, var_s = _spatial_moments(s)
    out = centered / ag.sqrt(var_c + eps * eps) * ag.sqrt(var_s) + mu_s
    return _out(out, content, style)


def make_mirrors(g_s, g_t, g_inter):
    """Restyle source and target maps with their paired intermediate maps.

    Row i of ``g_inter`` must be the mix of row i of ``g_s`` and ``g_t``.
    Either of ``g_s``/``g_t`` may be None (DG mode builds source mirrors only).
    """
    gi = ag.as_tensor(g_inter)
    mirrors = []
    for g in (g_s, g_t):
        if g is None:
            mirrors.append(None)
            continue
        if ag.as_tensor(g).shape != gi.shape:
            raise DomainError("mirror batch is not aligned with the intermediate batch")
        mirrors.append(adain(g, g_inter))
    return tuple(mirrors)


def prediction_dist(net, g, stage, branch, tau=0.5):
    """Class distribution of a stage-``stage`` map at temperature ``tau``."""
    return softmax_temp(net.logits(net.forward_from_stage(g, stage, branch)), tau)


def consistency_loss(p_s, p_s_mirror, p_t=None, p_t_mirror=None, tau=0.5):
    """tau^2 * batch mean of symmetric KL between originals and mirrors."""
    pairs = [(p_s, p_s_mirror)]
    if p_t is not None:
        pairs.append((p_t, p_t_mirror))
    total = None
    for p, q in pairs:
        pt, qt = ag.as_tensor(p), ag.as_tensor(q)
        if pt.shape != qt.shape:
            raise DomainError(f"prediction shapes differ: {pt.shape} vs {qt.shape}")
        sym = kl_divergence(pt, qt) + kl_divergence(qt, pt)
        term = sym.mean() if sym.ndim else sym
        total = term if total is None else total + term
    loss = total * (tau * tau)
    return _out(loss, p_s, p_s_mirror, p_t, p_t_mirror)
