"""Re-identification supervision: cross-entropy, batch-hard triplet with a
cross-batch memory of past embeddings, and their combination."""
from __future__ import annotations

import warnings
from collections import deque

import numpy as np

from . import _kernels
from . import autograd as ag
from .errors import DomainError
from .numerics import PROB_FLOOR, _out

DEFAULT_MARGIN = 0.3


class NoValidAnchorWarning(UserWarning):
    """No anchor in the batch had a positive; the triplet term is zero."""


def cls_loss(probs, labels):
    """Mean negative log-probability of the true class."""
    p = ag.as_tensor(probs)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    y = ag.no_grad_value(labels)
    idx = np.argmax(y, axis=1) if y.ndim == 2 else y.astype(np.int64).reshape(-1)
    if len(idx) != p.shape[0]:
        raise DomainError("label count does not match predictions")
    picked = p[np.arange(len(idx)), idx]
    loss = -ag.log(ag.clamp_min(picked, PROB_FLOOR)).sum() / float(len(idx))
    return _out(loss, probs)


def cls_loss_from_logits(logits, labels, tau=1.0):
    """Cross-entropy computed through log-softmax (stable for training)."""
    z = ag.as_tensor(logits) * (1.0 / tau)
    y = np.asarray(labels, dtype=np.int64)
    lp = ag.log_softmax(z, axis=-1)
    return -lp[np.arange(len(y)), y].sum() / float(len(y))


class MemoryBank:
    """FIFO queue of detached (embedding, label, domain) entries."""

    def __init__(self, capacity, dim):
        if capacity < 0:
            raise DomainError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._entries = deque()

    def __len__(self):
        return len(self._entries)

    def clear(self):
        self._entries.clear()

    def snapshot(self):
        """Arrays ``(embeddings, labels, domains)`` in insertion order."""
        if not self._entries:
            return np.zeros((0, self.dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        emb = np.stack([e[0] for e in self._entries])
        labels = np.array([e[1] for e in self._entries], dtype=np.int64)
        domains = np.array([e[2] for e in self._entries], dtype=np.int64)
        return emb, labels, domains


def update_memory(bank, embeddings, labels, domain=0):
    """Append a batch (copied, gradient-free); evict the oldest when over capacity."""
    emb = np.array(ag.no_grad_value(embeddings), dtype=np.float64)
    if emb.size == 0:
        return
    emb = emb.reshape(-1, emb.shape[-1])
    if emb.shape[1] != bank.dim:
        raise DomainError(f"embedding dim {emb.shape[1]} != bank dim {bank.dim}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    domains = np.broadcast_to(np.asarray(domain, dtype=np.int64), labels.shape)
    for e, y, d in zip(emb, labels, domains):
        bank._entries.append((e, int(y), int(d)))
    while len(bank._entries) > bank.capacity:
        bank._entries.popleft()


def _pairwise(x, y):
    diff = x.reshape(x.shape[0], 1, -1) - y.reshape(1, y.shape[0], -1)
    return ag.sqrt((diff * diff).sum(axis=2))


def triplet_xbm_loss(embeddings, labels, bank=None, margin=DEFAULT_MARGIN):
    """Batch-hard triplet loss with negatives mined from batch and memory.

    For each anchor the farthest same-label batch sample is the positive and
    the nearest different-label sample over the batch and the memory bank is
    the negative (ties go to the batch).  Anchors without a positive are
    skipped; an anchor without any negative contributes zero.
    """
    x = ag.as_tensor(embeddings)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if len(y) != n:
        raise DomainError("label count does not match embeddings")
    dist = _pairwise(x, x)
    same = y[:, None] == y[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    if bank is not None and len(bank):
        bank_emb, bank_labels, _ = bank.snapshot()
        if bank_emb.shape[1] != x.shape[1]:
            raise DomainError("bank dimension does not match embeddings")
        dist = ag.concat([dist, _pairwise(x, ag.Tensor(bank_emb))], axis=1)
        pos_mask = np.concatenate([pos_mask, np.zeros((n, len(bank_labels)), bool)], axis=1)
        neg_mask = np.concatenate([neg_mask, y[:, None] != bank_labels[None, :]], axis=1)
    pos_idx, neg_idx = _kernels.hardest(dist.data, pos_mask, neg_mask)
    rows = np.flatnonzero(pos_idx >= 0)
    if len(rows) == 0:
        warnings.warn("no anchor has a positive; triplet loss is 0", NoValidAnchorWarning,
                      stacklevel=2)
        return _out(x.sum() * 0.0, embeddings)
    rows = rows[neg_idx[rows] >= 0]
    n_valid = int((pos_idx >= 0).sum())
    if len(rows) == 0:
        return _out(x.sum() * 0.0, embeddings)
    d_ap = dist[rows, pos_idx[rows]]
    d_an = dist[rows, neg_idx[rows]]
    hinge = ag.clamp_min(d_ap - d_an + margin, 0.0)
    return _out(hinge.sum() / float(n_valid), embeddings)


def reid_loss(cls, tri, mu1):
    """(1 - mu1) * cls + tri."""
    if not 0.0 <= mu1 <= 1.0:
        raise DomainError("mu1 must lie in [0, 1]")
    return cls * (1.0 - mu1) + tri
