"""Layers: Linear, ReLU, BatchNorm1d, Flatten and the container blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import BatchTooSmall, ShapeMismatch
from .tensor import Tensor

__all__ = [
    "Module", "Linear", "ReLU", "BatchNorm1d", "Flatten", "Sequential", "SequentialEx",
    "MergeLayer", "mlp", "model_from_config", "norm_params", "state_tensors",
]


class Module:
    """Base layer. Parameters and buffers iterate in registration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, Tensor] = {}
        self._children: list[Module] = []
        self.training = True

    def add_param(self, name: str, value) -> Tensor:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value) -> Tensor:
        t = Tensor(value)
        self._buffers[name] = t
        return t

    def children(self) -> list["Module"]:
        return list(self._children)

    def modules(self) -> Iterator["Module"]:
        yield self
        for c in self._children:
            yield from c.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, v in self._params.items():
            yield prefix + k, v
        for i, c in enumerate(self._children):
            yield from c.named_parameters(f"{prefix}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, v in self._buffers.items():
            yield prefix + k, v
        for i, c in enumerate(self._children):
            yield from c.named_buffers(f"{prefix}{i}.")

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def forward(self, x):
        raise NotImplementedError

    def forward_ex(self, x, orig):
        """Forward inside a SequentialEx block; ``orig`` is the block input."""
        return self.forward(x)

    def __call__(self, x):
        return self.forward(x)

    def config(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, init: str = "uniform", rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if init == "zeros":
            w, b = np.zeros((n_in, n_out)), np.zeros(n_out)
        else:
            rng = rng or T.get_rng()
            bound = 1.0 / math.sqrt(n_in)
            w = rng.uniform(-bound, bound, (n_in, n_out))
            b = rng.uniform(-bound, bound, n_out)
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", b)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"Linear({self.n_in}, {self.n_out}) got input {x.shape}")
        return x @ self.weight + self.bias

    def config(self):
        return {"kind": "Linear", "n_in": self.n_in, "n_out": self.n_out}


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)

    def config(self):
        return {"kind": "ReLU"}


class BatchNorm1d(Module):
    """Batch normalisation over the leading axis of (n, features) inputs.

    Training mode normalises with the (biased) batch variance and updates the
    running statistics with the unbiased one:
    ``running <- (1 - momentum) * running + momentum * batch_stat``.
    Eval mode uses the running statistics.
    """

    def __init__(self, n_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.n_features, self.eps, self.momentum = n_features, eps, momentum
        self.weight = self.add_param("weight", np.ones(n_features))
        self.bias = self.add_param("bias", np.zeros(n_features))
        self.running_mean = self.add_buffer("running_mean", np.zeros(n_features))
        self.running_var = self.add_buffer("running_var", np.ones(n_features))

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeMismatch(f"BatchNorm1d({self.n_features}) got input {x.shape}")
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise BatchTooSmall("BatchNorm1d in training mode needs a batch of at least 2")
            mu = x.mean(axis=0, keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=0, keepdims=True)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mu.data.reshape(-1)
            self.running_var.data = (1 - m) * self.running_var.data + m * var.data.reshape(-1) * n / (n - 1)
            xhat = xc / T.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean.data) / np.sqrt(self.running_var.data + self.eps)
        return xhat * self.weight + self.bias

    def config(self):
        return {"kind": "BatchNorm1d", "n_features": self.n_features, "eps": self.eps,
                "momentum": self.momentum}


class Flatten(Module):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def config(self):
        return {"kind": "Flatten"}


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self._children = list(layers)

    def __getitem__(self, i):
        return self._children[i]

    def __len__(self):
        return len(self._children)

    def forward(self, x):
        for layer in self._children:
            x = layer(x)
        return x

    def config(self):
        return {"kind": type(self).__name__, "children": [c.config() for c in self._children]}


class SequentialEx(Sequential):
    """Like Sequential, but every child also sees the block's original input."""

    def forward(self, x):
        orig = x
        for layer in self._children:
            x = layer.forward_ex(x, orig)
        return x


class MergeLayer(Module):
    """Merge the running value with the enclosing block's input.

    ``merge="add"`` gives a residual connection, ``"cat"`` a dense one
    (concatenation along the feature axis).
    """

    def __init__(self, merge: str = "add"):
        super().__init__()
        if merge not in ("add", "cat"):
            raise ValueError(f"unknown merge {merge!r}")
        self.merge = merge

    def forward(self, x):
        raise TypeError("MergeLayer only works inside a SequentialEx block")

    def forward_ex(self, x, orig):
        if self.merge == "add":
            return x + orig
        return T.concat([x, orig], axis=1)

    def config(self):
        return {"kind": "MergeLayer", "merge": self.merge}


_KINDS = {"Linear", "ReLU", "BatchNorm1d", "Flatten", "Sequential", "SequentialEx", "MergeLayer"}


def model_from_config(cfg: dict) -> Module:
    """Rebuild a layer tree from ``Module.config()`` output (weights not restored)."""
    kind = cfg.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind == "Linear":
        return Linear(cfg["n_in"], cfg["n_out"], init="zeros")
    if kind == "ReLU":
        return ReLU()
    if kind == "BatchNorm1d":
        return BatchNorm1d(cfg["n_features"], cfg["eps"], cfg["momentum"])
    if kind == "Flatten":
        return Flatten()
    if kind == "MergeLayer":
        return MergeLayer(cfg["merge"])
    children = [model_from_config(c) for c in cfg["children"]]
    return SequentialEx(*children) if kind == "SequentialEx" else Sequential(*children)


def mlp(sizes, bn: bool = False, rng=None) -> Sequential:
    """Linear/ReLU stack, e.g. ``mlp([2, 16, 2])``; optional BatchNorm after each hidden ReLU."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Linear(a, b, rng=rng))
        if i < len(sizes) - 2:
            layers.append(ReLU())
            if bn:
                layers.append(BatchNorm1d(b))
    return Sequential(*layers)


def norm_params(model: Module) -> list[Tensor]:
    """Affine parameters of every BatchNorm1d layer in ``model``."""
    return [p for m in model.modules() if isinstance(m, BatchNorm1d) for p in m._params.values()]


def state_tensors(model: Module) -> list[tuple[str, Tensor]]:
    """Parameters followed by buffers, each in definition order (weight blob order)."""
    return list(model.named_parameters()) + list(model.named_buffers())
