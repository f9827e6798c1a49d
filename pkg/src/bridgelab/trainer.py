"""Training loops: cross-domain adaptation with pseudo-labels (``train_uda``)
and multi-source generalization (``train_dg``), plus the Adam optimizer,
the total objective and checkpoint round-trips."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import checkpoint
from .backbone import NetConfig, StagedNetwork
from .config import TrainConfig, parse_mix_mode
from .errors import ConfigurationError, DomainError, StateError
from .evaluation import evaluate_retrieval
from .idm import (RatioPredictor, bridge_feat_loss, bridge_pred_loss, diversity_loss,
                  mix_features, sample_beta_ratios)
from .losses import MemoryBank, cls_loss_from_logits, triplet_xbm_loss, update_memory
from .mgm import adain, consistency_loss
from .numerics import softmax_temp
from .pseudo import EmptyClusteringWarning, assign_pseudo_labels, bcubed_fscore, nmi

COMPONENTS = ("cls", "tri", "bridge_pred", "bridge_feat", "div", "cons")


class Adam:
    """Adam with coupled L2 weight decay and a step-drop learning rate."""

    def __init__(self, lr, betas=(0.9, 0.999), weight_decay=0.0, eps=1e-8,
                 drop_epochs=(), drop_factor=10.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.drop_epochs = tuple(drop_epochs)
        self.drop_factor = drop_factor
        self.state = {}
        self.skipped = 0

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch``: divided by 10 at each drop."""
        k = sum(1 for e in self.drop_epochs if epoch >= e)
        return self.lr / self.drop_factor ** k

    def step(self, params, epoch=0):
        """Update ``params`` from their ``.grad``; returns False (and counts a
        skip) when any gradient is non-finite."""
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
        if not all(np.isfinite(g).all() for g in grads):
            self.skipped += 1
            return False
        lr = self.lr_at(epoch)
        live = set()
        for p, g in zip(params, grads):
            key = id(p)
            live.add(key)
            st = self.state.get(key)
            if st is None or st[0].shape != p.data.shape:
                st = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self.state[key] = st
            g = g + self.weight_decay * p.data
            st[0] = self.beta1 * st[0] + (1 - self.beta1) * g
            st[1] = self.beta2 * st[1] + (1 - self.beta2) * g * g
            st[2] += 1
            m_hat = st[0] / (1 - self.beta1 ** st[2])
            v_hat = st[1] / (1 - self.beta2 ** st[2])
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        for key in [k for k in self.state if k not in live]:
            del self.state[key]
        return True


def optimizer_for(config):
    return Adam(config.lr, (config.beta1, config.beta2), config.weight_decay,
                drop_epochs=config.lr_drop_epochs)


def effective_weights(config):
    """Loss weights after the ablation switches; a disabled term weighs 0."""
    mix_kind, _ = parse_mix_mode(config.mix_mode)
    return {
        "mu1": config.mu1 if config.use_bridge_pred else 0.0,
        "mu2": config.mu2 if config.use_bridge_feat else 0.0,
        "mu3": config.mu3 if (config.use_div and mix_kind == "idm") else 0.0,
        "mu4": config.mu4 if config.use_cons else 0.0,
    }


def total_loss(components, weights):
    """(1 - mu1) cls + tri + mu1 bridge_pred + mu2 bridge_feat + mu3 div + mu4 cons.

    ``components`` maps names in :data:`COMPONENTS` to scalars or Tensors;
    missing terms count as zero.
    """
    mu1 = weights.get("mu1", 0.0)
    if not 0.0 <= mu1 <= 1.0:
        raise DomainError("mu1 must lie in [0, 1]")
    scale = {"cls": 1.0 - mu1, "tri": 1.0, "bridge_pred": mu1,
             "bridge_feat": weights.get("mu2", 0.0), "div": weights.get("mu3", 0.0),
             "cons": weights.get("mu4", 0.0)}
    total = 0.0
    for name, value in components.items():
        if name not in scale:
            raise DomainError(f"unknown loss component {name!r}")
        if scale[name] != 0.0:
            total = value * scale[name] + total
    return total


def _value(x):
    return float(x.data) if isinstance(x, ag.Tensor) else float(x)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def pk_batch(rng, labels, n_ids, k):
    """Indices of ``n_ids`` random labels with ``k`` samples each."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) == 0:
        raise DomainError("no labelled samples to draw from")
    chosen = rng.choice(uniq, size=n_ids, replace=len(uniq) < n_ids)
    out = []
    for y in chosen:
        pool = np.flatnonzero(labels == y)
        out.append(rng.choice(pool, size=k, replace=len(pool) < k))
    return np.concatenate(out)


def relabel(identities):
    """Map arbitrary identity ids to 0..C-1 (sorted order)."""
    uniq, inv = np.unique(np.asarray(identities), return_inverse=True)
    return inv.astype(np.int64), uniq


# ---------------------------------------------------------------------------
# results and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: StagedNetwork
    predictor: RatioPredictor | None
    config: TrainConfig
    log: list = field(default_factory=list)
    twin: StagedNetwork | None = None
    extras: dict = field(default_factory=dict)

    def embed(self, x, branch=None):
        branch = branch or ("target" if self.config.mode == "uda" else "source")
        return self.net.embed(x, branch)

    def evaluate(self, dataset, branch=None):
        """mAP and CMC@1/5/10 on all-vs-all retrieval within ``dataset``."""
        return evaluate_retrieval(self.embed(dataset.images, branch), dataset.identities)


def save_result(result, path):
    sections = {checkpoint.NET_TAG: result.net.state_dict()}
    if result.predictor is not None:
        sections[checkpoint.IDM_TAG] = result.predictor.state_dict()
    if result.twin is not None:
        sections[checkpoint.TWIN_TAG] = result.twin.state_dict()
    meta = {"train": result.config.to_dict(), "net": result.net.config.to_dict()}
    checkpoint.save(path, sections, meta)


def load_result(path):
    sections, meta = checkpoint.load(path)
    if meta is None or "train" not in meta or "net" not in meta:
        raise StateError(f"{path}: checkpoint lacks its configuration")
    config = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in meta["train"].items()})
    net = StagedNetwork(NetConfig.from_dict(meta["net"]))
    _load_net(net, sections[checkpoint.NET_TAG])
    predictor = None
    if checkpoint.IDM_TAG in sections:
        predictor = RatioPredictor(config.widths[config.stage_m],
                                   np.random.default_rng(0), config.reduction)
        predictor.load_state_dict(sections[checkpoint.IDM_TAG])
    twin = None
    if checkpoint.TWIN_TAG in sections:
        twin = net.twin(config.stage_l)
        _load_net(twin, sections[checkpoint.TWIN_TAG])
    return TrainResult(net, predictor, config, [], twin)


def _load_net(net, state):
    net.load_state_dict(state)
    net.classifier.expect_target_classes(net.classifier.n_target)


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------


def _build(config, n_classes, in_shape):
    net = StagedNetwork(NetConfig(in_shape=tuple(in_shape), widths=config.widths,
                                  kernel=config.kernel, n_source=n_classes,
                                  seed=config.seed))
    rng = np.random.default_rng([config.seed, 7])
    predictor = RatioPredictor(config.widths[config.stage_m], rng, config.reduction)
    return net, predictor


def _ratios(config, predictor, g_s, g_t, rng):
    kind, arg = parse_mix_mode(config.mix_mode)
    n = g_s.shape[0]
    if kind == "idm":
        return predictor(g_s, g_t)
    if kind == "random_beta":
        return ag.Tensor(sample_beta_ratios(rng, n, arg))
    return ag.Tensor(np.tile([arg, 1.0 - arg], (n, 1)))


def _calibrate_inter(net, x_s, x_t, m, rng):
    """Initialize the intermediate branch's statistics from 50/50 mixes."""
    net.eval()
    g_s = net.forward_to_stage(x_s, m, "source").data
    g_t = net.forward_to_stage(x_t, m, "target").data
    n = min(len(g_s), len(g_t))
    g_s = g_s[rng.permutation(len(g_s))[:n]]
    g_t = g_t[rng.permutation(len(g_t))[:n]]
    net.calibrate(0.5 * g_s + 0.5 * g_t, "inter", from_stage=m)
    net.train()


def _mix_stats(ratios, f_s, f_t, f_i):
    """Ratio summary and the empirical distance ratio d(s, inter)/d(t, inter)."""
    a = ratios.data
    d_s = np.linalg.norm(f_s.data - f_i.data, axis=1)
    d_t = np.linalg.norm(f_t.data - f_i.data, axis=1)
    ok = (d_t > 1e-12) & (a[:, 0] > 1e-12)
    dist_ratio = d_s[ok] / d_t[ok]
    mix_ratio = a[ok, 1] / a[ok, 0]
    return {
        "a_s_mean": float(a[:, 0].mean()),
        "a_s_std": float(a[:, 0].std()),
        "log_dist_ratio": float(np.median(np.log(dist_ratio))) if ok.any() else float("nan"),
        "log_mix_ratio": float(np.median(np.log(mix_ratio))) if ok.any() else float("nan"),
    }


class _EpochLog:
    def __init__(self):
        self.sums = {}
        self.counts = {}

    def add(self, name, value):
        value = _value(value)
        if math.isfinite(value):
            self.sums[name] = self.sums.get(name, 0.0) + value
            self.counts[name] = self.counts.get(name, 0) + 1

    def means(self):
        return {k: self.sums[k] / self.counts[k] for k in sorted(self.sums)}


def _step(config, optimizer, params, loss, epoch):
    for p in params:
        p.grad = None
    if isinstance(loss, ag.Tensor) and loss.requires_grad:
        if not math.isfinite(float(loss.data)):
            optimizer.skipped += 1
            return False
        loss.backward()
    return optimizer.step(params, epoch)


def _all_params(*modules):
    seen, out = set(), []
    for mod in modules:
        if mod is None:
            continue
        for p in mod.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out


# ---------------------------------------------------------------------------
# unsupervised domain adaptation
# ---------------------------------------------------------------------------


def _classifier_centroids(net, emb, labels, n_clusters):
    """Per-cluster means of the classifier-normalized embeddings."""
    norm = net.classifier.norm
    was = norm.training
    norm.eval()
    try:
        h = norm(emb, "shared").data
    finally:
        norm.train(was)
    return np.stack([h[labels == k].mean(axis=0) for k in range(n_clusters)])


def _uda_iteration(config, net, predictor, bank, rng, xs, ys, xt, yt, target_ok, weights):
    m, l = config.stage_m, config.stage_l
    comps = {}
    stats = {}
    n = len(xs)

    g_s = net.forward_to_stage(xs, m, "source")
    h_s = net.run_stages(g_s, m, l, "source")
    f_s = net.forward_from_stage(h_s, l, "source")
    feats, labels = [f_s], [ys]
    if target_ok:
        g_t = net.forward_to_stage(xt, m, "target")
        h_t = net.run_stages(g_t, m, l, "target")
        f_t = net.forward_from_stage(h_t, l, "target")
        feats.append(f_t)
        labels.append(yt)

    mixing = target_ok and config.uses_mixing
    n_reid = sum(len(y) for y in labels)
    extra_feats = []
    if mixing:
        perm = rng.permutation(n)
        g_tp = g_t[perm]
        ratios = _ratios(config, predictor, g_s, g_tp, rng)
        g_i, _ = mix_features(g_s, g_tp, ratios)
        h_i = net.run_stages(g_i, m, l, "inter")
        f_i = net.forward_from_stage(h_i, l, "inter")
        extra_feats.append(f_i)
        if config.use_cons:
            mir_s = adain(h_s, h_i)
            mir_t = adain(h_t[perm], h_i)
            extra_feats.append(net.forward_from_stage(mir_s, l, "inter"))
            extra_feats.append(net.forward_from_stage(mir_t, l, "inter"))

    all_f = ag.concat(feats + extra_feats, axis=0)
    logits = net.logits(all_f)
    y_reid = np.concatenate(labels)
    reid_f = all_f[:n_reid]
    lo = n_reid
    cls_logits, cls_y = logits[:n_reid], y_reid
    tri_f, tri_y = reid_f, y_reid
    if mixing:
        f_tp = f_t[perm]
        yt_p = yt[perm]
        if config.use_cons and config.mirrors_in_reid:
            # mirrors keep the identity of the map they restyle
            cls_logits = ag.concat([cls_logits, logits[lo + n:lo + 3 * n]], axis=0)
            cls_y = np.concatenate([cls_y, ys, yt_p])
        if config.inter_in_triplet:
            # every mixed sample is its own identity, so it only serves as a negative
            fresh = net.classifier.n_classes + np.arange(n)
            tri_f = ag.concat([tri_f, f_i], axis=0)
            tri_y = np.concatenate([tri_y, fresh])
    comps["cls"] = cls_loss_from_logits(cls_logits, cls_y)
    comps["tri"] = triplet_xbm_loss(tri_f, tri_y, bank if config.use_xbm else None,
                                    config.margin)
    if mixing:
        p_i = softmax_temp(logits[lo:lo + n], 1.0)
        if weights["mu1"]:
            comps["bridge_pred"] = bridge_pred_loss(p_i, ys, yt_p, ratios)
        if weights["mu2"]:
            comps["bridge_feat"] = bridge_feat_loss(f_s, f_tp, f_i, ratios)
        if weights["mu3"]:
            comps["div"] = diversity_loss(ratios)
        if config.use_cons:
            tau = config.tau
            p_s = softmax_temp(logits[:n], tau)
            p_t = softmax_temp(logits[n:2 * n][perm], tau)
            p_ms = softmax_temp(logits[lo + n:lo + 2 * n], tau)
            p_mt = softmax_temp(logits[lo + 2 * n:lo + 3 * n], tau)
            comps["cons"] = consistency_loss(p_s, p_ms, p_t, p_mt, tau)
        stats = _mix_stats(ratios, f_s, f_tp, f_i)
    return comps, stats, reid_f, y_reid


def init_uda(config, source, target, rng=None):
    """The network and ratio predictor exactly as :func:`train_uda` starts
    them: seeded weights, every branch calibrated to its data."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    xs = source.images.astype(np.float64)
    xt = target.images.astype(np.float64)
    n_src = len(np.unique(source.identities))
    net, predictor = _build(config, n_src, xs.shape[1:])
    net.calibrate(xs, "source")
    net.calibrate(xt, "target")
    _calibrate_inter(net, xs, xt, config.stage_m, rng)
    net.train()
    predictor.train()
    return net, predictor


def train_uda(config, source, target, evaluate_on=None, progress=None):
    """Adapt from labelled ``source`` to unlabelled ``target``.

    Every epoch the target embeddings are clustered into pseudo-identities
    and the classifier's target rows are re-initialized from the cluster
    centroids; the memory bank is emptied since its labels are stale.
    ``evaluate_on`` (a dataset) adds retrieval metrics to every epoch record.
    """
    if config.mode != "uda":
        raise ConfigurationError("train_uda needs mode = 'uda'")
    rng = np.random.default_rng(config.seed)
    net, predictor = init_uda(config, source, target, rng)
    xs_all = source.images.astype(np.float64)
    ys_all, _ = relabel(source.identities)
    xt_all = target.images.astype(np.float64)
    n_src = int(ys_all.max() + 1)
    capacity = config.capacity or (len(xs_all) + len(xt_all))
    bank = MemoryBank(capacity, net.embed_dim)
    optimizer = optimizer_for(config)
    weights = effective_weights(config)
    truth_t = target.identities
    log = []
    for epoch in range(config.epochs):
        emb_t = net.embed(xt_all, "target")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyClusteringWarning)
            assignment, _ = assign_pseudo_labels(emb_t, config.eps, config.min_pts)
        n_clusters = assignment.n_clusters
        net.classifier.expect_target_classes(n_clusters)
        centroids = (_classifier_centroids(net, emb_t, assignment.labels, n_clusters)
                     if n_clusters else np.zeros((0, net.embed_dim)))
        net.refresh_target_classifier(centroids, n_clusters)
        bank.clear()
        keep = ~assignment.noise
        xt_train = xt_all[keep]
        yt_train = assignment.labels[keep] + n_src
        target_ok = n_clusters > 0
        params = _all_params(net, predictor)
        elog = _EpochLog()
        k = config.instances
        for _ in range(config.iters_per_epoch):
            s_idx = pk_batch(rng, ys_all, config.identities_per_batch, k)
            xs, ys = xs_all[s_idx], ys_all[s_idx]
            xt = yt = None
            if target_ok:
                t_idx = pk_batch(rng, yt_train, config.identities_per_batch, k)
                xt, yt = xt_train[t_idx], yt_train[t_idx]
            comps, stats, reid_f, y_reid = _uda_iteration(
                config, net, predictor, bank, rng, xs, ys, xt, yt, target_ok, weights)
            loss = total_loss(comps, weights)
            _step(config, optimizer, params, loss, epoch)
            if config.use_xbm:
                update_memory(bank, reid_f, y_reid)
            elog.add("loss", loss)
            for name, value in comps.items():
                elog.add(name, value)
            for name, value in stats.items():
                elog.add(name, value)
        record = {"epoch": epoch, "lr": optimizer.lr_at(epoch), "n_clusters": n_clusters,
                  "noise_frac": float(assignment.noise.mean()),
                  "bcubed_f": bcubed_fscore(assignment, truth_t),
                  "nmi": nmi(assignment, truth_t), "skipped_steps": optimizer.skipped}
        record.update(elog.means())
        if evaluate_on is not None:
            res = evaluate_retrieval(net.embed(evaluate_on.images, "target"),
                                     evaluate_on.identities)
            record.update({f"eval_{k}": v for k, v in res.items()})
        log.append(record)
        if progress is not None:
            progress(record)
    return TrainResult(net, predictor, config, log)


# ---------------------------------------------------------------------------
# domain generalization
# ---------------------------------------------------------------------------


def _dg_iteration(config, net, twin, predictor, bank, rng, x, y, weights):
    m, l = config.stage_m, config.stage_l
    comps, stats = {}, {}
    n = len(x)
    g = net.forward_to_stage(x, m, "source")
    h = net.run_stages(g, m, l, "source")
    f = net.forward_from_stage(h, l, "source")
    feats = [f]
    if config.uses_mixing:
        perm = rng.permutation(n)
        stats["self_pair_rate"] = float(np.mean(perm == np.arange(n)))
        ratios = _ratios(config, predictor, g, g[perm], rng)
        g_i, _ = mix_features(g, g[perm], ratios)
        h_i = net.run_stages(g_i, m, l, "inter")
        f_i = net.forward_from_stage(h_i, l, "inter")
        feats.append(f_i)
    all_f = ag.concat(feats, axis=0)
    logits = net.logits(all_f)
    comps["cls"] = cls_loss_from_logits(logits[:n], y)
    comps["tri"] = triplet_xbm_loss(f, y, bank if config.use_xbm else None, config.margin)
    if config.uses_mixing:
        p_i = softmax_temp(logits[n:2 * n], 1.0)
        if weights["mu1"]:
            comps["bridge_pred"] = bridge_pred_loss(p_i, y, y[perm], ratios)
        if weights["mu2"]:
            comps["bridge_feat"] = bridge_feat_loss(f, f[perm], f_i, ratios)
        if weights["mu3"]:
            comps["div"] = diversity_loss(ratios)
        if config.use_cons:
            mirror = adain(h, h_i)
            f_m = twin.forward_from_stage(mirror, l, "inter")
            p = softmax_temp(logits[:n], config.tau)
            p_m = softmax_temp(twin.logits(f_m), config.tau)
            comps["cons"] = consistency_loss(p, p_m, tau=config.tau)
        stats.update(_mix_stats(ratios, f, f[perm], f_i))
    return comps, stats, f


def train_dg(config, sources):
    """Train on the union of labelled ``sources`` (a list of datasets).

    Mixing pairs each sample with a shuffled batch member; mirrors pass
    through a twin copy of the layers after the mirror stage.
    """
    if config.mode != "dg":
        raise ConfigurationError("train_dg needs mode = 'dg'")
    if not sources:
        raise DomainError("need at least one source dataset")
    pool = sources[0]
    for ds in sources[1:]:
        pool = pool + ds
    rng = np.random.default_rng(config.seed)
    x_all = pool.images.astype(np.float64)
    y_all, _ = relabel(pool.identities)
    net, predictor = _build(config, int(y_all.max() + 1), x_all.shape[1:])
    net.calibrate(x_all, "source")
    _calibrate_inter(net, x_all, x_all, config.stage_m, rng)
    twin = net.twin(config.stage_l) if (config.use_cons and config.uses_mixing) else None
    capacity = config.capacity or len(x_all)
    bank = MemoryBank(capacity, net.embed_dim)
    optimizer = optimizer_for(config)
    weights = effective_weights(config)
    params = _all_params(net, predictor, twin)
    log = []
    for epoch in range(config.epochs):
        elog = _EpochLog()
        for _ in range(config.iters_per_epoch):
            idx = pk_batch(rng, y_all, config.identities_per_batch, config.instances)
            comps, stats, f = _dg_iteration(config, net, twin, predictor, bank, rng,
                                            x_all[idx], y_all[idx], weights)
            loss = total_loss(comps, weights)
            _step(config, optimizer, params, loss, epoch)
            if config.use_xbm:
                update_memory(bank, f, y_all[idx])
            elog.add("loss", loss)
            for name, value in list(comps.items()) + list(stats.items()):
                elog.add(name, value)
        record = {"epoch": epoch, "lr": optimizer.lr_at(epoch),
                  "skipped_steps": optimizer.skipped}
        record.update(elog.means())
        log.append(record)
    return TrainResult(net, predictor, config, log, twin)


def write_log(path, log):
    """One JSON object per epoch."""
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in log)
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))
