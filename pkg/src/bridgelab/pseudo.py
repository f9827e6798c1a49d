"""Density-based pseudo-labelling of target embeddings and clustering-quality
scores (BCubed F, NMI)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError

NOISE = _kernels.NOISE
DEFAULT_EPS = 0.6
DEFAULT_MIN_PTS = 4


class EmptyClusteringWarning(UserWarning):
    """DBSCAN found no clusters; the epoch falls back to source-only training."""


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        valid = labels[labels != NOISE]
        if (valid < 0).any() or (valid >= self.n_clusters).any():
            raise DomainError("cluster id outside 0..n_clusters-1")
        if len(np.unique(valid)) != self.n_clusters:
            raise DomainError("n_clusters does not match the distinct labels")

    @property
    def noise(self):
        return self.labels == NOISE

    def __len__(self):
        return len(self.labels)


def l2_normalize(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def eps_adjacency(points, eps):
    p = np.asarray(points, dtype=np.float64)
    sq = ((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    return sq <= eps * eps


def dbscan(points, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS):
    """DBSCAN with Euclidean distance on the points as given.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Cluster ids follow the order of each cluster's
    lowest-index core point; a border point reachable from several clusters
    takes the lowest id.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if min_pts < 1:
        raise DomainError("min_pts must be at least 1")
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), 0)
    labels = _kernels.dbscan_expand(eps_adjacency(points, eps), min_pts)
    return ClusterAssignment(labels, int(labels.max() + 1) if (labels >= 0).any() else 0)


def _as_labels(x):
    if isinstance(x, ClusterAssignment):
        return x.labels
    return np.asarray(x)


def _noise_as_singletons(labels):
    labels = np.asarray(labels, dtype=np.int64).copy()
    noise = labels == NOISE
    if noise.any():
        base = labels.max() + 1 if (~noise).any() else 0
        labels[noise] = base + np.arange(noise.sum())
    return labels


def _prepare(pred, truth):
    p = _as_labels(pred)
    t = _as_labels(truth)
    if len(p) != len(t):
        raise DomainError(f"length mismatch: {len(p)} vs {len(t)}")
    if isinstance(pred, ClusterAssignment) or np.issubdtype(p.dtype, np.integer):
        p = _noise_as_singletons(p)
    return p, t


def bcubed(pred, truth):
    """BCubed ``(precision, recall, F)``; noise points count as singletons."""
    p, t = _prepare(pred, truth)
    if len(p) == 0:
        raise DomainError("empty clustering")
    _, p_inv = np.unique(p, return_inverse=True)
    _, t_inv = np.unique(t, return_inverse=True)
    table = np.zeros((p_inv.max() + 1, t_inv.max() + 1))
    np.add.at(table, (p_inv, t_inv), 1.0)
    both = table[p_inv, t_inv]
    precision = float(np.mean(both / table.sum(axis=1)[p_inv]))
    recall = float(np.mean(both / table.sum(axis=0)[t_inv]))
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def bcubed_fscore(pred, truth):
    return bcubed(pred, truth)[2]


def _entropy(counts):
    pr = counts[counts > 0] / counts.sum()
    return float(-(pr * np.log(pr)).sum())


def nmi(pred, truth):
    """Mutual information over the arithmetic mean of the two entropies."""
    p, t = _prepare(pred, truth)
    if len(p) == 0:
        raise DomainError("empty clustering")
    _, p_inv = np.unique(p, return_inverse=True)
    _, t_inv = np.unique(t, return_inverse=True)
    table = np.zeros((p_inv.max() + 1, t_inv.max() + 1))
    np.add.at(table, (p_inv, t_inv), 1.0)
    h_p = _entropy(table.sum(axis=1))
    h_t = _entropy(table.sum(axis=0))
    if h_p == 0.0 or h_t == 0.0:
        same = h_p == h_t == 0.0
        return 1.0 if same else 0.0
    n = table.sum()
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(np.clip(mi / (0.5 * (h_p + h_t)), 0.0, 1.0))


def assign_pseudo_labels(embeddings, eps=DEFAULT_EPS, min_pts=DEFAULT_MIN_PTS):
    """Cluster L2-normalized embeddings; return the assignment and the mean
    (un-normalized) embedding of every cluster."""
    emb = np.asarray(embeddings, dtype=np.float64)
    assignment = dbscan(l2_normalize(emb), eps, min_pts) if len(emb) else \
        ClusterAssignment(np.zeros(0, dtype=np.int64), 0)
    if assignment.n_clusters == 0:
        warnings.warn("no clusters found; training proceeds source-only",
                      EmptyClusteringWarning, stacklevel=2)
        return assignment, np.zeros((0, emb.shape[1] if emb.ndim == 2 else 0))
    centroids = np.stack([emb[assignment.labels == k].mean(axis=0)
                          for k in range(assignment.n_clusters)])
    return assignment, centroids
