"""Hot inner loops with a numba path and a pure-numpy fallback.

The active backend is fixed at import time.  Set ``BRIDGELAB_NUMBA=0`` to
force the numpy fallback (or when numba is not installed).  Both backends
return identical results; ``tests/test_kernels.py`` holds them to that.
"""
from __future__ import annotations

import os
from collections import deque

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("BRIDGELAB_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"

NOISE = -1


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# DBSCAN expansion over a precomputed eps-adjacency matrix
# ---------------------------------------------------------------------------


@_njit
def _dbscan_expand_loop(adj, min_pts):
    n = adj.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(n):
            if adj[i, j]:
                c += 1
        counts[i] = c
    labels = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    queued = np.zeros(n, dtype=np.bool_)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or counts[i] < min_pts:
            continue
        head = 0
        tail = 0
        queue[tail] = i
        tail += 1
        queued[i] = True
        while head < tail:
            p = queue[head]
            head += 1
            labels[p] = cluster
            if counts[p] < min_pts:
                continue
            for q in range(n):
                if adj[p, q] and not queued[q] and labels[q] == -1:
                    queued[q] = True
                    queue[tail] = q
                    tail += 1
        cluster += 1
    return labels


def _dbscan_expand_numpy(adj, min_pts):
    n = adj.shape[0]
    counts = adj.sum(axis=1)
    core = counts >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    queued = np.zeros(n, dtype=bool)
    cluster = 0
    for i in np.flatnonzero(core):
        if labels[i] != NOISE:
            continue
        queue = deque([i])
        queued[i] = True
        while queue:
            p = queue.popleft()
            labels[p] = cluster
            if not core[p]:
                continue
            fresh = np.flatnonzero(adj[p] & ~queued & (labels == NOISE))
            queued[fresh] = True
            queue.extend(fresh.tolist())
        cluster += 1
    return labels


# ---------------------------------------------------------------------------
# Average precision and first-hit rank over sorted match matrices
# ---------------------------------------------------------------------------


@_njit
def _ap_rows_loop(matches):
    nq, ng = matches.shape
    ap = np.zeros(nq)
    first = np.full(nq, -1, dtype=np.int64)
    for i in range(nq):
        hits = 0
        acc = 0.0
        for j in range(ng):
            if matches[i, j]:
                hits += 1
                acc += hits / (j + 1.0)
                if first[i] < 0:
                    first[i] = j
        if hits > 0:
            ap[i] = acc / hits
    return ap, first


def _ap_rows_numpy(matches):
    m = matches.astype(np.float64)
    hits = np.cumsum(m, axis=1)
    ranks = np.arange(1, m.shape[1] + 1, dtype=np.float64)
    n_rel = m.sum(axis=1)
    acc = (m * hits / ranks).sum(axis=1)
    ap = np.divide(acc, n_rel, out=np.zeros_like(acc), where=n_rel > 0)
    first = np.where(n_rel > 0, np.argmax(matches, axis=1), -1).astype(np.int64)
    return ap, first


# ---------------------------------------------------------------------------
# Batch-hard mining: hardest positive / hardest negative per anchor row
# ---------------------------------------------------------------------------


@_njit
def _hardest_loop(dist, pos_mask, neg_mask):
    n, m = dist.shape
    pos = np.full(n, -1, dtype=np.int64)
    neg = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        best_p = -np.inf
        best_n = np.inf
        for j in range(m):
            d = dist[i, j]
            if pos_mask[i, j] and d > best_p:
                best_p = d
                pos[i] = j
            if neg_mask[i, j] and d < best_n:
                best_n = d
                neg[i] = j
    return pos, neg


def _hardest_numpy(dist, pos_mask, neg_mask):
    dp = np.where(pos_mask, dist, -np.inf)
    dn = np.where(neg_mask, dist, np.inf)
    pos = np.where(pos_mask.any(axis=1), np.argmax(dp, axis=1), -1)
    neg = np.where(neg_mask.any(axis=1), np.argmin(dn, axis=1), -1)
    return pos.astype(np.int64), neg.astype(np.int64)


numba_impl = {
    "dbscan_expand": _dbscan_expand_loop,
    "ap_rows": _ap_rows_loop,
    "hardest": _hardest_loop,
}
numpy_impl = {
    "dbscan_expand": _dbscan_expand_numpy,
    "ap_rows": _ap_rows_numpy,
    "hardest": _hardest_numpy,
}
_active = numba_impl if USE_NUMBA else numpy_impl


def dbscan_expand(adj, min_pts):
    """Cluster labels (``NOISE`` = -1) from a boolean eps-adjacency matrix.

    ``adj[i, i]`` must be True: a point counts itself as a neighbour.
    Clusters are numbered in order of their lowest-index core point, and a
    border point joins the first cluster that reaches it.
    """
    adj = np.ascontiguousarray(adj, dtype=np.bool_)
    return _active["dbscan_expand"](adj, int(min_pts))


def ap_rows(matches):
    """Per-row average precision and 0-based first-hit rank (-1 if none)."""
    return _active["ap_rows"](np.ascontiguousarray(matches, dtype=np.bool_))


def hardest(dist, pos_mask, neg_mask):
    """Column index of the farthest positive and nearest negative per row."""
    return _active["hardest"](
        np.ascontiguousarray(dist, dtype=np.float64),
        np.ascontiguousarray(pos_mask, dtype=np.bool_),
        np.ascontiguousarray(neg_mask, dtype=np.bool_),
    )
