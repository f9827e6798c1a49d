"""Staged feed-forward network with per-domain normalization branches.

Stage 0 average-pools the input 2x2 and every stage is a zero-padded
k x k neighbourhood map, so hidden maps keep one spatial size from stage
0 on.  The embedding is the global average pool of the last stage, whose
batch norm comes after its activation and has no shift, so embeddings
are centred.  A hybrid classifier (shared batch norm + linear head over source identities and
target pseudo-identities) sits on top.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigurationError, DomainError, StateError
from .nn import DomainBranchNorm, Module, Stage, parameter
from .numerics import softmax_temp

BRANCHES = ("source", "target", "inter")
DEFAULT_TAU = 0.5


@dataclass
class NetConfig:
    in_shape: tuple = (8, 8, 4)
    widths: tuple = (8, 16, 16, 32, 32)
    pool: int = 2
    kernel: int = 3
    n_source: int = 30
    seed: int = 0
    branches: tuple = BRANCHES

    @property
    def n_stages(self):
        return len(self.widths)

    @property
    def embed_dim(self):
        return self.widths[-1]

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("in_shape", "widths", "branches"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class HybridClassifier(Module):
    """Shared feature normalization followed by a (C_s + C_t)-way linear head."""

    def __init__(self, dim, n_source, rng):
        self.dim = dim
        self.norm = DomainBranchNorm(dim, branches=("shared",))
        self.source_weight = parameter(rng.normal(0.0, 0.01, size=(n_source, dim)))
        self.target_weight = parameter(np.zeros((0, dim)))
        self.bias = parameter(np.zeros(n_source))
        self._expected_target = 0

    @property
    def n_source(self):
        return self.source_weight.shape[0]

    @property
    def n_target(self):
        return self.target_weight.shape[0]

    @property
    def n_classes(self):
        return self.n_source + self.n_target

    def expect_target_classes(self, n_target):
        """Declare a new pseudo-label count; classification fails until refresh."""
        self._expected_target = int(n_target)

    def logits(self, embedding):
        if self._expected_target != self.n_target:
            raise StateError(
                f"classifier has {self.n_target} target rows but "
                f"{self._expected_target} pseudo-identities exist; refresh it first"
            )
        f = ag.as_tensor(embedding)
        single = f.ndim == 1
        if single:
            f = f.reshape(1, -1)
        if f.shape[-1] != self.dim:
            raise DomainError(f"embedding dim {f.shape[-1]} != {self.dim}")
        h = self.norm(f, "shared")
        w = ag.concat([self.source_weight, self.target_weight], axis=0)
        bias = ag.concat([self.bias, np.zeros(self.n_target)], axis=0)
        out = h @ w.T + bias
        return out.reshape(-1) if single else out

    def refresh_target(self, centroids, n_target):
        centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, self.dim) \
            if len(centroids) else np.zeros((0, self.dim))
        if len(centroids) != n_target:
            raise DomainError(f"{len(centroids)} centroids for {n_target} clusters")
        norms = np.linalg.norm(centroids, axis=1, keepdims=True)
        rows = centroids / np.where(norms > 0, norms, 1.0)
        self.target_weight = parameter(rows)
        self._expected_target = n_target


class StagedNetwork(Module):
    """Stages 0..S, global average pooling and a hybrid classifier."""

    def __init__(self, config=None, **overrides):
        config = copy.deepcopy(config) if config is not None else NetConfig()
        for key, value in overrides.items():
            setattr(config, key, value)
        if config.n_stages < 3:
            raise ConfigurationError("need at least stages 0..2")
        self.config = config
        rng = np.random.default_rng(config.seed)
        h, w, c = config.in_shape
        stages = []
        c_in = c
        for i, width in enumerate(config.widths):
            stages.append(Stage(c_in, width, rng, pool=config.pool if i == 0 else 1,
                                branches=config.branches,
                                final=i == len(config.widths) - 1,
                                kernel=config.kernel))
            c_in = width
        self.stages = stages
        self.classifier = HybridClassifier(config.embed_dim, config.n_source, rng)

    @property
    def n_stages(self):
        return len(self.stages)

    @property
    def last_stage(self):
        return len(self.stages) - 1

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def stage_shape(self, m):
        h, w, _ = self.config.in_shape
        p = self.config.pool
        return (h // p, w // p, self.config.widths[m])

    def _check_stage(self, m):
        if not 0 <= m <= self.last_stage:
            raise ConfigurationError(f"stage index {m} outside 0..{self.last_stage}")

    def forward_to_stage(self, x, m, branch="source"):
        """Hidden map after stage ``m`` (inclusive)."""
        self._check_stage(m)
        x = ag.as_tensor(x)
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.config.in_shape):
            raise ConfigurationError(
                f"input shape {x.shape} does not match {self.config.in_shape}"
            )
        for stage in self.stages[: m + 1]:
            x = stage(x, branch)
        return x.reshape(x.shape[1:]) if single else x

    def forward_from_stage(self, g, m, branch="source"):
        """Embedding from a hidden map taken after stage ``m``."""
        self._check_stage(m)
        g = ag.as_tensor(g)
        single = g.ndim == 3
        if single:
            g = g.reshape((1,) + g.shape)
        if tuple(g.shape[1:]) != self.stage_shape(m):
            raise ConfigurationError(
                f"map shape {g.shape[1:]} does not match stage {m} {self.stage_shape(m)}"
            )
        g = self.run_stages(g, m, self.last_stage, branch)
        f = g.mean(axis=(1, 2))
        return f.reshape(-1) if single else f

    def run_stages(self, g, after, upto, branch="source"):
        """Apply stages ``after+1 .. upto`` to a batched map from stage ``after``."""
        for stage in self.stages[after + 1: upto + 1]:
            g = stage(g, branch)
        return g

    def forward(self, x, branch="source"):
        return self.forward_from_stage(self.forward_to_stage(x, 0, branch), 0, branch)

    __call__ = forward

    def logits(self, embedding):
        return self.classifier.logits(embedding)

    def classify(self, embedding, tau=DEFAULT_TAU):
        return softmax_temp(self.logits(embedding), tau)

    def refresh_target_classifier(self, centroids, n_target):
        self.classifier.refresh_target(centroids, n_target)

    def twin(self, l):
        """A network sharing stages 0..l with this one and owning copies of
        stages l+1..S and of the classifier."""
        self._check_stage(l)
        other = copy.copy(self)
        other.stages = list(self.stages[: l + 1]) + [copy.deepcopy(s) for s in self.stages[l + 1:]]
        other.classifier = copy.deepcopy(self.classifier)
        return other

    def embed(self, x, branch="source", batch_size=256):
        """Eval-mode embeddings as a plain array, computed in chunks."""
        was = self.training
        self.eval()
        try:
            x = np.asarray(x, dtype=np.float64)
            out = [self.forward(x[i:i + batch_size], branch).data
                   for i in range(0, len(x), batch_size)]
        finally:
            self.train(was)
        if not out:
            return np.zeros((0, self.embed_dim))
        return np.concatenate(out, axis=0)

    def calibrate(self, x, branch, from_stage=None):
        """Set ``branch`` running statistics to the exact statistics of ``x``.

        With ``from_stage`` set, ``x`` is a map from that stage and only the
        later stages are calibrated.  The classifier norm is calibrated too
        and returned embeddings are plain arrays.
        """
        norms = [s.norm for s in self.stages] + [self.classifier.norm]
        saved = [n.momentum for n in norms]
        was = self.training
        try:
            for n in norms:
                n.momentum = 1.0
            self.train()
            x = np.asarray(x, dtype=np.float64)
            if from_stage is None:
                f = self.forward(x, branch)
            else:
                f = self.forward_from_stage(x, from_stage, branch)
            self.classifier.norm(f, "shared")
        finally:
            for n, m in zip(norms, saved):
                n.momentum = m
            self.train(was)
        return f.data
