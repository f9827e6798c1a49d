"""Intermediate-domain mixing: ratio prediction, feature mixing, and the
diversity and bridge losses that shape the mixed domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, DomainError
from .nn import DomainBranchNorm, Linear, Module
from .numerics import PROB_FLOOR, _out, population_std

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class MixRatio:
    """Source/target weights of one mixed pair; they sum to one."""

    a_s: float
    a_t: float

    def __post_init__(self):
        if not (0.0 <= self.a_s <= 1.0 and 0.0 <= self.a_t <= 1.0):
            raise DomainError(f"ratio ({self.a_s}, {self.a_t}) outside [0, 1]")
        if abs(self.a_s + self.a_t - 1.0) > SIMPLEX_TOL:
            raise DomainError(f"ratio ({self.a_s}, {self.a_t}) does not sum to 1")

    def as_array(self):
        return np.array([self.a_s, self.a_t])


def _ratios_tensor(a):
    """Accept a MixRatio, a sequence of them, or an (n, 2) array/Tensor."""
    if isinstance(a, MixRatio):
        return Tensor(a.as_array().reshape(1, 2)), True
    if isinstance(a, (list, tuple)) and a and isinstance(a[0], MixRatio):
        return Tensor(np.stack([r.as_array() for r in a])), False
    t = ag.as_tensor(a)
    if t.ndim == 1:
        return t.reshape(1, 2), True
    return t, False


def check_simplex(a):
    data = ag.no_grad_value(a).reshape(-1, 2)
    if (data < -SIMPLEX_TOL).any() or (data > 1 + SIMPLEX_TOL).any() \
            or (np.abs(data.sum(axis=1) - 1.0) > SIMPLEX_TOL).any():
        raise DomainError("mix ratios must lie on the 1-simplex")


class RatioPredictor(Module):
    """Predicts (a_s, a_t) from a pair of hidden maps.

    Each map is reduced to [avg-pool; max-pool] over space, passed through a
    shared ``fc1`` (c x 2c); the two results are summed, then
    ``fc2`` (c/r x c) -> batch norm -> softplus -> ``fc3`` (2 x c/r) -> softmax.
    """

    def __init__(self, channels, rng, reduction=2):
        if reduction < 1 or channels % reduction:
            raise ConfigurationError(f"reduction {reduction} must divide {channels}")
        hidden = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.fc1 = Linear(2 * channels, channels, rng)
        self.fc2 = Linear(channels, hidden, rng)
        self.bn = DomainBranchNorm(hidden, branches=("shared",))
        self.fc3 = Linear(hidden, 2, rng)

    def _describe(self, g):
        n = g.shape[0]
        flat = g.reshape(n, -1, g.shape[-1])
        return ag.concat([flat.mean(axis=1), ag.amax(flat, axis=1)], axis=1)

    def __call__(self, g_s, g_t):
        g_s, g_t = ag.as_tensor(g_s), ag.as_tensor(g_t)
        if g_s.shape != g_t.shape:
            raise DomainError(f"map shapes differ: {g_s.shape} vs {g_t.shape}")
        if g_s.shape[-1] != self.channels:
            raise DomainError(f"expected {self.channels} channels, got {g_s.shape[-1]}")
        z = self.fc1(self._describe(g_s)) + self.fc1(self._describe(g_t))
        h = ag.softplus(self.bn(self.fc2(z), "shared"))
        return ag.softmax(self.fc3(h), axis=-1)


def predict_ratios(predictor, g_s, g_t):
    """Mix ratios for index-aligned source/target maps.

    Batched maps (n, h, w, c) give an (n, 2) Tensor of [a_s, a_t] rows; a
    single (h, w, c) pair gives a :class:`MixRatio`.
    """
    single = ag.as_tensor(g_s).ndim == 3
    if single:
        g_s = ag.as_tensor(g_s).reshape((1,) + tuple(g_s.shape))
        g_t = ag.as_tensor(g_t).reshape((1,) + tuple(g_t.shape))
    a = predictor(g_s, g_t)
    if single:
        a_s, a_t = (float(v) for v in a.data[0])
        return MixRatio(a_s, a_t)
    return a


def mix_features(g_s, g_t, a, y_s=None, y_t=None):
    """Convex combination of maps (and of label distributions, if given).

    Returns ``(g_inter, y_inter)``; ``y_inter`` is None without labels.
    """
    gs, gt = ag.as_tensor(g_s), ag.as_tensor(g_t)
    if gs.shape != gt.shape:
        raise DomainError(f"map shapes differ: {gs.shape} vs {gt.shape}")
    ratios, single = _ratios_tensor(a)
    check_simplex(ratios)
    batched = gs.ndim == 4
    if batched and ratios.shape[0] != gs.shape[0]:
        raise DomainError(f"{ratios.shape[0]} ratios for {gs.shape[0]} pairs")
    shape = (-1, 1, 1, 1) if batched else ()
    w_s = ratios[:, 0].reshape(shape) if batched else ratios[0, 0]
    w_t = ratios[:, 1].reshape(shape) if batched else ratios[0, 1]
    g_inter = w_s * gs + w_t * gt
    y_inter = None
    if y_s is not None:
        ys, yt = ag.as_tensor(y_s), ag.as_tensor(y_t)
        if ys.shape != yt.shape:
            raise DomainError("label shapes differ")
        lw = (-1, 1) if ys.ndim == 2 else ()
        ws = ratios[:, 0].reshape(lw) if ys.ndim == 2 else ratios[0, 0]
        wt = ratios[:, 1].reshape(lw) if ys.ndim == 2 else ratios[0, 1]
        y_inter = _out(ws * ys + wt * yt, a, y_s, y_t)
    return _out(g_inter, g_s, g_t, a), y_inter


def diversity_loss(ratios):
    """Negative spread of the batch's ratios: -[std(a_s) + std(a_t)]."""
    r, _ = _ratios_tensor(ratios)
    if r.shape[0] == 0:
        raise DomainError("diversity loss of an empty batch")
    loss = -(population_std(r[:, 0]) + population_std(r[:, 1]))
    return _out(loss, ratios)


def _class_index(y):
    y = ag.no_grad_value(y)
    if y.ndim == 2:
        return np.argmax(y, axis=1)
    return y.astype(np.int64).reshape(-1)


def bridge_pred_loss(probs, y_s, y_t, ratios):
    """Ratio-weighted cross-entropy of intermediate predictions against the
    source and target (pseudo) labels, averaged over the batch.

    ``y_s``/``y_t`` are class indices or one-hot rows.
    """
    p = ag.as_tensor(probs)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    r, _ = _ratios_tensor(ratios)
    cs, ct = _class_index(y_s), _class_index(y_t)
    n = p.shape[0]
    if not (len(cs) == len(ct) == r.shape[0] == n):
        raise DomainError("batch sizes of predictions, labels and ratios differ")
    rows = np.arange(n)
    log_ps = ag.log(ag.clamp_min(p[rows, cs], PROB_FLOOR))
    log_pt = ag.log(ag.clamp_min(p[rows, ct], PROB_FLOOR))
    loss = -(r[:, 0] * log_ps + r[:, 1] * log_pt).sum() / float(n)
    return _out(loss, probs, ratios)


def bridge_feat_loss(f_s, f_t, f_inter, ratios):
    """Ratio-weighted Euclidean distance of intermediate embeddings to their
    source and target counterparts, averaged over the batch."""
    fs, ft, fi = (ag.as_tensor(v) for v in (f_s, f_t, f_inter))
    if fs.ndim == 1:
        fs, ft, fi = (v.reshape(1, -1) for v in (fs, ft, fi))
    if not (fs.shape == ft.shape == fi.shape):
        raise DomainError(f"embedding shapes differ: {fs.shape}, {ft.shape}, {fi.shape}")
    r, _ = _ratios_tensor(ratios)
    if r.shape[0] != fs.shape[0]:
        raise DomainError("ratio count does not match batch")
    d_s = ag.sqrt(((fs - fi) ** 2).sum(axis=1))
    d_t = ag.sqrt(((ft - fi) ** 2).sum(axis=1))
    loss = (r[:, 0] * d_s + r[:, 1] * d_t).sum() / float(fs.shape[0])
    return _out(loss, f_s, f_t, f_inter, ratios)


def sample_beta_ratios(rng, n, alpha):
    """Random mixup ratios: a_s ~ Beta(alpha, alpha), a_t = 1 - a_s."""
    a_s = rng.beta(alpha, alpha, size=n)
    return np.stack([a_s, 1.0 - a_s], axis=1)
