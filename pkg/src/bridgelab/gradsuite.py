"""Finite-difference verification of every training loss on a small random
network, through the same forward code the trainer runs."""
from __future__ import annotations

import time

import numpy as np

from .config import TrainConfig
from .losses import MemoryBank, update_memory
from .numerics import grad_check
from .trainer import _all_params, _build, _uda_iteration, effective_weights, total_loss

SUITE_LOSSES = ("div", "bridge_pred", "bridge_feat", "cons", "total")


def _problem(seed, n_ids=3, k=2):
    rng = np.random.default_rng(seed)
    config = TrainConfig(seed=seed, batch_n=n_ids * k, instances=k)
    n_src = n_ids
    net, predictor = _build(config, n_src, (8, 8, 4))
    n = n_ids * k
    xs = rng.normal(size=(n, 8, 8, 4))
    xt = rng.normal(size=(n, 8, 8, 4)) * 1.5 + 0.5
    ys = np.repeat(np.arange(n_ids), k)
    yt = np.repeat(np.arange(n_ids), k) + n_src
    net.classifier.expect_target_classes(n_ids)
    net.refresh_target_classifier(rng.normal(size=(n_ids, net.embed_dim)), n_ids)
    bank = MemoryBank(4 * n, net.embed_dim)
    update_memory(bank, rng.normal(size=(2 * n, net.embed_dim)),
                  rng.integers(0, n_src + n_ids, size=2 * n))
    return config, net, predictor, bank, (xs, ys, xt, yt)


def loss_closures(seed=0):
    """``(closures, params)``: one zero-argument closure per suite loss,
    each rebuilding its loss from the current parameters."""
    config, net, predictor, bank, (xs, ys, xt, yt) = _problem(seed)
    weights = effective_weights(config)

    def components():
        # a fresh generator each call keeps the pairing fixed across probes
        comps, _, _, _ = _uda_iteration(config, net, predictor, bank,
                                        np.random.default_rng(seed + 1),
                                        xs, ys, xt, yt, True, weights)
        return comps

    closures = {name: (lambda name=name: components()[name])
                for name in SUITE_LOSSES if name != "total"}
    closures["total"] = lambda: total_loss(components(), weights)
    return closures, _all_params(net, predictor)


def run_gradient_suite(seed=0, max_per_tensor=4, step=1e-5, losses=SUITE_LOSSES):
    """Grad-check every suite loss; returns ``{name: GradReport}`` and the
    elapsed seconds."""
    t0 = time.perf_counter()
    closures, params = loss_closures(seed)
    reports = {}
    for i, name in enumerate(losses):
        reports[name] = grad_check(closures[name], params, step=step,
                                   max_per_tensor=max_per_tensor, seed=seed + i)
    return reports, time.perf_counter() - t0
