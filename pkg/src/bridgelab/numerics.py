"""Probability utilities and finite-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DomainError, EvaluationError

PROB_FLOOR = 1e-12


def _out(result, *inputs):
    """Return a Tensor when any input was a Tensor, else plain values."""
    if any(isinstance(x, Tensor) for x in inputs):
        return result
    data = result.data
    return float(data) if data.ndim == 0 else data


def softmax_temp(logits, tau=1.0, axis=-1):
    """Softmax of ``logits / tau`` along ``axis``."""
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    x = ag.as_tensor(logits)
    if x.data.size == 0:
        raise DomainError("softmax of an empty vector")
    return _out(ag.softmax(x * (1.0 / tau), axis=axis), logits)


def population_std(values, axis=None):
    """Standard deviation dividing by N (not N - 1)."""
    x = ag.as_tensor(values)
    if x.data.size == 0:
        raise DomainError("standard deviation of an empty sequence")
    mu = x.mean(axis=axis, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axis)
    return _out(ag.sqrt(var), values)


def kl_divergence(p, q, axis=-1):
    """KL(p || q) along ``axis``, with both arguments floored at 1e-12."""
    pt, qt = ag.as_tensor(p), ag.as_tensor(q)
    if pt.shape != qt.shape:
        raise DomainError(f"shape mismatch {pt.shape} vs {qt.shape}")
    lp = ag.log(ag.clamp_min(pt, PROB_FLOOR))
    lq = ag.log(ag.clamp_min(qt, PROB_FLOOR))
    return _out((pt * (lp - lq)).sum(axis=axis), p, q)


@dataclass(frozen=True)
class GradReport:
    max_abs_err: float
    max_rel_err: float
    checked_params: int

    def passed(self, tol):
        return self.max_rel_err < tol


def grad_check(loss_fn, params, step=1e-4, tol=1e-4, max_per_tensor=None,
               seed=0, floor=1e-3):
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn`` takes no arguments and rebuilds the scalar loss from the
    current contents of ``params`` (a Tensor or a list of Tensors, mutated in
    place while probing).  The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.  With
    ``max_per_tensor`` set, a seeded random subset of coordinates is probed.
    """
    if step <= 0:
        raise DomainError("step must be positive")
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("non-finite loss")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    max_abs = 0.0
    max_rel = 0.0
    checked = 0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            up = float(loss_fn().data)
            flat[k] = orig - step
            down = float(loss_fn().data)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise EvaluationError("non-finite loss during probing")
            numeric = (up - down) / (2.0 * step)
            a = float(grad.reshape(-1)[k])
            err = abs(a - numeric)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / max(abs(a), abs(numeric), floor))
            checked += 1
    if checked == 0:
        raise DomainError("no parameters to check")
    return GradReport(max_abs, max_rel, checked)
