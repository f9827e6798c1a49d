"""Retrieval metrics (mAP, CMC) and distance-distribution analyses."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .checkpoint import atomic_write_bytes
from .errors import DomainError
from .pseudo import l2_normalize

HIST_BINS = 50
HIST_RANGE = (0.0, 2.0)


@dataclass
class RankingResult:
    ap: np.ndarray
    cmc: np.ndarray
    n_excluded: int = 0

    @property
    def mean_ap(self):
        return float(self.ap.mean()) if len(self.ap) else 0.0


def _distances(a, b):
    a = l2_normalize(a)
    b = l2_normalize(b)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def rank_queries(query, gallery, query_labels, gallery_labels, query_ids=None,
                 gallery_ids=None):
    """Per-query AP and first-hit CMC vectors.

    Gallery items whose id equals the query's id (the same sample) are
    dropped from that query's ranking.  Queries left with no relevant item
    are excluded and counted.
    """
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    ql = np.asarray(query_labels)
    gl = np.asarray(gallery_labels)
    if len(query) != len(ql) or len(gallery) != len(gl):
        raise DomainError("embeddings and labels differ in length")
    dist = _distances(query, gallery)
    order = np.argsort(dist, axis=1, kind="stable")
    matches = gl[order] == ql[:, None]
    keep = np.ones_like(matches)
    if query_ids is not None and gallery_ids is not None:
        gid = np.asarray(gallery_ids)[order]
        keep = gid != np.asarray(query_ids)[:, None]
    # drop excluded columns per row; pad with non-matches at the tail
    width = int(keep.sum(axis=1).max()) if len(query) else 0
    m = np.zeros((len(query), width), dtype=bool)
    for i in range(len(query)):
        row = matches[i][keep[i]]
        m[i, :len(row)] = row
    relevant = m.any(axis=1)
    ap, first = _kernels.ap_rows(m[relevant])
    ng = m.shape[1]
    cmc = np.zeros((int(relevant.sum()), ng), dtype=bool)
    for i, f in enumerate(first):
        cmc[i, f:] = True
    return RankingResult(ap, cmc, int((~relevant).sum()))


def map_cmc(query, gallery, query_labels, gallery_labels, ranks=(1, 5, 10),
            query_ids=None, gallery_ids=None):
    """Mean average precision and CMC@k on L2-normalized Euclidean distance.

    Returns ``(mAP, {k: cmc_at_k})``.
    """
    res = rank_queries(query, gallery, query_labels, gallery_labels, query_ids, gallery_ids)
    n = len(res.ap)
    cmc_at = {}
    for k in ranks:
        if k < 1:
            raise DomainError("ranks start at 1")
        kk = min(k, res.cmc.shape[1]) if res.cmc.size else 0
        cmc_at[int(k)] = float(res.cmc[:, kk - 1].mean()) if n and kk else 0.0
    return res.mean_ap, cmc_at


def evaluate_retrieval(embeddings, labels, ranks=(1, 5, 10)):
    """All-vs-all retrieval within one split, excluding each self-match."""
    ids = np.arange(len(labels))
    mean_ap, cmc = map_cmc(embeddings, embeddings, labels, labels, ranks, ids, ids)
    return {"mAP": mean_ap, **{f"rank{k}": v for k, v in cmc.items()}}


def pairwise_distance_samples(a, b, n_pairs, seed):
    """Distances between ``n_pairs`` random (a_i, b_j) pairs, L2-normalized."""
    a = l2_normalize(np.asarray(a, dtype=np.float64))
    b = l2_normalize(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise DomainError("both sets must be non-empty")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(a), size=n_pairs)
    j = rng.integers(0, len(b), size=n_pairs)
    return np.linalg.norm(a[i] - b[j], axis=1)


def positive_negative_distances(embeddings, labels, n_pairs, seed):
    """Distances of ``n_pairs`` random same-label and different-label pairs."""
    emb = l2_normalize(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    n = len(emb)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    pos_i, pos_j = np.nonzero(same)
    neg_i, neg_j = np.nonzero(~same & ~np.eye(n, dtype=bool))
    if len(pos_i) == 0 or len(neg_i) == 0:
        raise DomainError("need both positive and negative pairs")
    pk = rng.integers(0, len(pos_i), size=n_pairs)
    nk = rng.integers(0, len(neg_i), size=n_pairs)
    pos = np.linalg.norm(emb[pos_i[pk]] - emb[pos_j[pk]], axis=1)
    neg = np.linalg.norm(emb[neg_i[nk]] - emb[neg_j[nk]], axis=1)
    return pos, neg


def histogram(values, bins=HIST_BINS, value_range=HIST_RANGE):
    """Normalized histogram ``(mass, edges)`` with mass summing to 1."""
    counts, edges = np.histogram(np.clip(values, *value_range), bins=bins, range=value_range)
    total = counts.sum()
    mass = counts / total if total else counts.astype(np.float64)
    return mass, edges


def distribution_overlap(hist_a, hist_b):
    """Overlap coefficient sum_i min(a_i, b_i) of two normalized histograms."""
    a = np.asarray(hist_a, dtype=np.float64)
    b = np.asarray(hist_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"histogram bins differ: {a.shape} vs {b.shape}")
    return float(np.minimum(a, b).sum())


def histogram_csv(mass, edges):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "mass"])
    for lo, hi, m in zip(edges[:-1], edges[1:], mass):
        w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])
    return buf.getvalue()


def write_histogram_csv(path, mass, edges):
    atomic_write_bytes(path, histogram_csv(mass, edges).encode("utf-8"))


def write_metrics_json(path, metrics):
    atomic_write_bytes(path, (json.dumps(metrics, indent=2, sort_keys=True) + "\n").encode("utf-8"))
