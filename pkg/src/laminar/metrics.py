"""Streaming metrics: reset, accumulate per batch, read the epoch value."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import FlattenMismatch, ShapeMismatch
from .tensor import Tensor


def _np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def accuracy(pred, targ) -> float:
    """Fraction of rows whose argmax matches the integer target."""
    p, t = _np(pred), _np(targ).reshape(-1)
    if p.ndim != 2 or p.shape[0] != t.shape[0]:
        raise ShapeMismatch(f"accuracy needs (n, c) predictions and n targets, got {p.shape}, {t.shape}")
    return float(np.mean(p.argmax(axis=1) == t))


def error_rate(pred, targ) -> float:
    return 1.0 - accuracy(pred, targ)


class Metric:
    name = "metric"

    def reset(self) -> None:
        raise NotImplementedError

    def accumulate(self, pred, targ) -> None:
        raise NotImplementedError

    @property
    def value(self) -> float | None:
        raise NotImplementedError


class AvgMetric(Metric):
    """Batch-size weighted mean of a per-batch function."""

    def __init__(self, fn: Callable, name: str | None = None):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "metric")
        self.reset()

    def reset(self):
        self.total, self.count = 0.0, 0

    def accumulate(self, pred, targ):
        n = len(_np(targ))
        self.total += self.fn(pred, targ) * n
        self.count += n

    @property
    def value(self):
        return self.total / self.count if self.count else None


class AvgLoss(Metric):
    name = "loss"

    def reset(self):
        self.total, self.count = 0.0, 0

    def accumulate(self, loss: float, n: int):
        self.total += float(loss) * n
        self.count += n

    @property
    def value(self):
        return self.total / self.count if self.count else None


def flatten_check(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _np(a).reshape(-1), _np(b).reshape(-1)
    if a.shape != b.shape:
        raise FlattenMismatch(f"{a.size} predictions vs {b.size} targets")
    return a, b


class Dice(Metric):
    """Binary Dice, 2|A n B| / (|A| + |B|), accumulated over the whole epoch.

    ``pred`` holds per-class scores along ``axis`` and is argmaxed; ``targ``
    must already be 0/1.
    """

    name = "dice"

    def __init__(self, axis: int = 1):
        self.axis = axis
        self.reset()

    def reset(self):
        self.inter, self.union = 0.0, 0.0

    def accumulate(self, pred, targ):
        p, t = flatten_check(_np(pred).argmax(axis=self.axis), targ)
        self.inter += float((p * t).sum())
        self.union += float((p + t).sum())

    @property
    def value(self):
        return 2.0 * self.inter / self.union if self.union > 0 else None


# pre-activation adapters for AvgMetric-wrapped functions
def argmax_adapter(pred, axis: int = 1) -> np.ndarray:
    return _np(pred).argmax(axis=axis)


def threshold_adapter(pred, thresh: float = 0.5) -> np.ndarray:
    return (_np(pred) > thresh).astype(np.float64)


def sigmoid_adapter(pred) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-_np(pred)))


METRICS = {"accuracy": accuracy, "error_rate": error_rate}


def as_metric(m) -> Metric:
    if isinstance(m, Metric):
        return m
    if isinstance(m, str):
        if m == "dice":
            return Dice()
        return AvgMetric(METRICS[m], m)
    return AvgMetric(m)
