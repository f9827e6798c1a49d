"""Parameter containers and the layers the staged network is built from."""
from __future__ import annotations

import copy

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    """Minimal parameter tree with train/eval mode."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        seen = set()
        out = []
        for _, p in self.named_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def named_buffers(self, prefix=""):
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            if name not in state:
                raise ConfigurationError(f"missing parameter {name!r}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, b in self.named_buffers():
            if name not in state:
                raise ConfigurationError(f"missing buffer {name!r}")
            b[...] = state[name]

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def clone(self):
        return copy.deepcopy(self)


class Linear(Module):
    """y = x W^T + b over the last axis."""

    def __init__(self, n_in, n_out, rng, bias=True, scale=None):
        scale = np.sqrt(1.0 / n_in) if scale is None else scale
        self.weight = parameter(rng.normal(0.0, scale, size=(n_out, n_in)))
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ag.as_tensor(x) @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y


class DomainBranchNorm(Module):
    """Batch normalization with one set of running statistics per branch.

    The affine scale and shift are shared.  In training mode the batch
    statistics over every axis but the last are used and folded into the
    selected branch's running estimate; in eval mode only that branch's
    running estimate is read.
    """

    def __init__(self, channels, branches=("source", "target", "inter"),
                 momentum=0.1, eps=1e-5, shift=True):
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels)) if shift else None
        self.branches = tuple(branches)
        self.momentum = momentum
        self.eps = eps
        self.running_mean = {b: np.zeros(channels) for b in self.branches}
        self.running_var = {b: np.ones(channels) for b in self.branches}

    def named_buffers(self, prefix=""):
        for b in self.branches:
            yield f"{prefix}running_mean.{b}", self.running_mean[b]
            yield f"{prefix}running_var.{b}", self.running_var[b]

    def _branch(self, branch):
        if branch not in self.running_mean:
            raise ConfigurationError(
                f"unknown normalization branch {branch!r}; have {self.branches}"
            )
        return branch

    def __call__(self, x, branch):
        branch = self._branch(branch)
        x = ag.as_tensor(x)
        axes = tuple(range(x.ndim - 1))
        if self.training:
            mu = x.mean(axis=axes, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=axes, keepdims=True)
            m = self.momentum
            flat_mu = mu.data.reshape(-1)
            flat_var = var.data.reshape(-1)
            self.running_mean[branch][...] = (1 - m) * self.running_mean[branch] + m * flat_mu
            self.running_var[branch][...] = (1 - m) * self.running_var[branch] + m * flat_var
            xhat = centered / ag.sqrt(var + self.eps)
        else:
            mu = self.running_mean[branch]
            sd = np.sqrt(self.running_var[branch] + self.eps)
            xhat = (x - mu) / sd
        out = xhat * self.weight
        return out + self.bias if self.bias is not None else out


class Stage(Module):
    """Channel map over each ``kernel x kernel`` neighbourhood (zero padded,
    so the spatial size is kept), branch normalization and softplus.

    A hidden stage normalizes before the activation.  The final stage
    (``final=True``) activates first and normalizes after, without a shift,
    so pooled embeddings are centred yet still depend nonlinearly on every
    position.
    """

    def __init__(self, c_in, c_out, rng, pool=1, branches=("source", "target", "inter"),
                 final=False, kernel=1):
        self.pool = pool
        self.final = final
        self.kernel = kernel
        self.linear = Linear(kernel * kernel * c_in, c_out, rng)
        self.norm = DomainBranchNorm(c_out, branches, shift=not final)

    def __call__(self, x, branch):
        x = ag.as_tensor(x)
        if self.pool > 1:
            n, h, w, c = x.shape
            p = self.pool
            if h % p or w % p:
                raise ConfigurationError(f"map {h}x{w} not divisible by pool {p}")
            x = x.reshape(n, h // p, p, w // p, p, c).mean(axis=(2, 4))
        if self.kernel > 1:
            x = ag.neighbourhoods(x, self.kernel)
        if self.final:
            return self.norm(ag.softplus(self.linear(x)), branch)
        return ag.softplus(self.norm(self.linear(x), branch))
