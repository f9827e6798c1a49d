"""Desk-scale tasks and the experiment drivers built on them: the loss
ablation, the random-ratio mixup comparison, the plug-stage sweep, the
multi-source generalization comparison and the two alignment analyses."""
from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .evaluation import (distribution_overlap, histogram, pairwise_distance_samples,
                         positive_negative_distances)
from .idm import mix_features
from .synthdata import default_specs, generate_domain
from .trainer import _ratios, init_uda, train_dg, train_uda

N_IDS = 30
N_PER_ID = 8
NOISE_STD = 1.0
TEXTURE_SCALE = 0.3
BRIDGE_PAIRS = 20_000
POS_NEG_PAIRS = 10_000

VARIANTS = {
    "baseline": dict(use_bridge_pred=False, use_bridge_feat=False, use_div=False,
                     use_cons=False),
    "idm": dict(use_cons=False),
    "idm++": {},
}


def variant_config(name, base=None, **overrides):
    """Config of a named variant: ``baseline``, ``idm``, ``idm++`` or a mix
    mode such as ``random_beta:0.5`` (IDM++ losses with random ratios)."""
    base = base or TrainConfig()
    if name in VARIANTS:
        changes = dict(VARIANTS[name])
    else:
        changes = {"mix_mode": name}
    changes.update(overrides)
    return base.replace(**changes)


def uda_task(seed, noise_std=NOISE_STD, texture_scale=TEXTURE_SCALE, n_ids=N_IDS,
             n_per_id=N_PER_ID):
    """``(source, target_train, target_test)`` with disjoint identity ranges;
    the two target splits share one domain style."""
    specs = default_specs(seed, 2, noise_std=noise_std, texture_scale=texture_scale)
    source = generate_domain(seed, n_ids, n_per_id, specs[0], id_offset=0)
    target = generate_domain(seed, n_ids, n_per_id, specs[1], id_offset=n_ids)
    test = generate_domain(seed, n_ids, n_per_id, specs[1], id_offset=2 * n_ids)
    return source, target, test


def dg_task(seed, n_sources=3, noise_std=NOISE_STD, texture_scale=TEXTURE_SCALE,
            n_ids=N_IDS, n_per_id=N_PER_ID):
    """``(sources, unseen_test)``: labelled source domains and one held-out domain."""
    specs = default_specs(seed, n_sources + 1, noise_std=noise_std,
                          texture_scale=texture_scale)
    sources = [generate_domain(seed, n_ids, n_per_id, specs[d], id_offset=d * n_ids)
               for d in range(n_sources)]
    unseen = generate_domain(seed, n_ids, n_per_id, specs[n_sources],
                             id_offset=n_sources * n_ids)
    return sources, unseen


def run_uda(name, seed, base=None, task=None, **overrides):
    """Train one variant on the desk task and score the held-out target split."""
    config = variant_config(name, base, seed=seed, mode="uda", **overrides)
    source, target, test = task if task is not None else uda_task(seed)
    result = train_uda(config, source, target)
    metrics = result.evaluate(test)
    return result, metrics


def _median_table(runs):
    return {name: float(np.median([m["mAP"] for m in ms])) for name, ms in runs.items()}


def compare_uda(names, seeds, base=None, progress=None):
    """Per-seed metrics for every variant plus the median mAP of each."""
    runs = {n: [] for n in names}
    for seed in seeds:
        task = uda_task(seed)
        for name in names:
            _, metrics = run_uda(name, seed, base, task)
            runs[name].append(metrics)
            if progress is not None:
                progress(name, seed, metrics)
    return {"runs": runs, "median_mAP": _median_table(runs)}


def ablation_matrix(seeds, base=None, progress=None):
    return compare_uda(list(VARIANTS), seeds, base, progress)


def mixup_comparison(seeds, alphas=(0.5, 1.0), base=None, progress=None):
    names = ["idm++"] + [f"random_beta:{a}" for a in alphas]
    return compare_uda(names, seeds, base, progress)


def stage_sweep(seed, base=None, progress=None):
    """Target mAP of IDM++ for every plug pair 0 <= m <= l <= S."""
    base = base or TrainConfig()
    last = len(base.widths) - 1
    task = uda_task(seed)
    out = {}
    for m in range(last + 1):
        for l in range(m, last + 1):
            _, metrics = run_uda("idm++", seed, base, task, stage_m=m, stage_l=l)
            out[(m, l)] = metrics["mAP"]
            if progress is not None:
                progress((m, l), metrics)
    return out


def run_dg(name, seed, base=None, task=None, **overrides):
    config = variant_config(name, base, seed=seed, mode="dg", **overrides)
    sources, unseen = task if task is not None else dg_task(seed)
    result = train_dg(config, sources)
    return result, result.evaluate(unseen, "source")


def compare_dg(seeds, names=("baseline", "idm++"), base=None, progress=None):
    runs = {n: [] for n in names}
    for seed in seeds:
        task = dg_task(seed)
        for name in names:
            _, metrics = run_dg(name, seed, base, task)
            runs[name].append(metrics)
            if progress is not None:
                progress(name, seed, metrics)
    return {"runs": runs, "median_mAP": _median_table(runs)}


# ---------------------------------------------------------------------------
# alignment analyses
# ---------------------------------------------------------------------------


def bridge_distances(net, predictor, config, source_x, target_x, n_pairs=BRIDGE_PAIRS,
                     seed=0):
    """Sampled distances source-to-intermediate and target-to-intermediate.

    Source and target images are paired at random, mixed at the configured
    stage with the configured ratios, and all three embeddings are taken in
    eval mode through their own branches.
    """
    rng = np.random.default_rng(seed)
    m = config.stage_m
    n = min(len(source_x), len(target_x))
    xs = np.asarray(source_x, dtype=np.float64)[rng.permutation(len(source_x))[:n]]
    xt = np.asarray(target_x, dtype=np.float64)[rng.permutation(len(target_x))[:n]]
    was_net, was_pred = net.training, predictor.training
    net.eval()
    predictor.eval()
    try:
        g_s = net.forward_to_stage(xs, m, "source").data
        g_t = net.forward_to_stage(xt, m, "target").data
        ratios = _ratios(config, predictor, g_s, g_t, rng).data
        g_i, _ = mix_features(g_s, g_t, ratios)
        f_s = net.forward_from_stage(g_s, m, "source").data
        f_t = net.forward_from_stage(g_t, m, "target").data
        f_i = net.forward_from_stage(g_i, m, "inter").data
    finally:
        net.train(was_net)
        predictor.train(was_pred)
    d_s = pairwise_distance_samples(f_s, f_i, n_pairs, seed)
    d_t = pairwise_distance_samples(f_t, f_i, n_pairs, seed + 1)
    return d_s, d_t


def bridge_overlap(d_s, d_t):
    return distribution_overlap(histogram(d_s)[0], histogram(d_t)[0])


def pos_neg_overlap(embeddings, labels, n_pairs=POS_NEG_PAIRS, seed=0):
    pos, neg = positive_negative_distances(embeddings, labels, n_pairs, seed)
    return distribution_overlap(histogram(pos)[0], histogram(neg)[0]), pos, neg


def alignment_analysis(seed, base=None, task=None, trained=None):
    """Both alignment measurements for one seed.

    Returns the source/target-to-intermediate overlap at initialization and
    after IDM++ training, and the target positive/negative overlap of IDM++
    and of the baseline.  ``trained`` may carry already trained
    ``{"idm++": (result, metrics), "baseline": (result, metrics)}`` runs of
    this seed and task.
    """
    source, target, test = task if task is not None else uda_task(seed)
    trained = dict(trained or {})
    for name in ("idm++", "baseline"):
        if name not in trained:
            trained[name] = run_uda(name, seed, base, (source, target, test))
    full, full_metrics = trained["idm++"]
    base_res, base_metrics = trained["baseline"]
    config = full.config
    net0, pred0 = init_uda(config, source, target)
    before = bridge_overlap(*bridge_distances(net0, pred0, config, source.images,
                                              target.images, seed=seed))
    after = bridge_overlap(*bridge_distances(full.net, full.predictor, config,
                                             source.images, target.images, seed=seed))
    pn_full = pos_neg_overlap(full.embed(test.images), test.identities, seed=seed)[0]
    pn_base = pos_neg_overlap(base_res.embed(test.images), test.identities, seed=seed)[0]
    return {
        "bridge_overlap_init": before, "bridge_overlap_trained": after,
        "posneg_overlap_idm++": pn_full, "posneg_overlap_baseline": pn_base,
        "mAP_idm++": full_metrics["mAP"], "mAP_baseline": base_metrics["mAP"],
    }
