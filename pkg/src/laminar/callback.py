"""Callback base class, cancellation signals, and the built-in callbacks."""
from __future__ import annotations

import csv
import math

import numpy as np

from .metrics import AvgLoss, as_metric
from .tensor import Tensor

EVENTS = (
    "begin_fit", "begin_epoch", "begin_train", "begin_batch", "after_pred", "after_loss",
    "after_back", "after_step", "after_cancel", "after_batch", "after_train",
    "begin_validate", "after_validate", "after_epoch", "after_fit",
)


class CancelSignal(Exception):
    scope = ""


class CancelBatchException(CancelSignal):
    scope = "batch"


class CancelTrainException(CancelSignal):
    scope = "train"


class CancelValidException(CancelSignal):
    scope = "validate"


class CancelEpochException(CancelSignal):
    scope = "epoch"


class CancelFitException(CancelSignal):
    scope = "fit"


class Callback:
    """Base callback. Define methods named after events; read learner state
    through attribute access (``self.loss``), write it through ``self.learn``."""

    learn = None

    def __getattr__(self, name):
        if name != "learn" and self.learn is not None:
            return getattr(self.learn, name)
        raise AttributeError(name)

    @property
    def name(self) -> str:
        return type(self).__name__


class TraceCallback(Callback):
    """Records every event it sees, in order."""

    def __init__(self):
        self.events: list[str] = []

    def __getattr__(self, name):
        if name in EVENTS:
            return lambda: self.events.append(name)
        return super().__getattr__(name)


def smooth_losses(losses, beta: float = 0.98) -> list[float]:
    """Debiased exponential moving average."""
    out, avg = [], 0.0
    for i, loss in enumerate(losses, 1):
        avg = beta * avg + (1 - beta) * loss
        out.append(avg / (1 - beta ** i))
    return out


class Recorder(Callback):
    """Logs (iter, lr, mom, loss, smooth_loss) every training batch and a
    metric row every epoch."""

    def __init__(self, metrics=(), beta: float = 0.98):
        self.metrics = [as_metric(m) for m in metrics]
        self.beta = beta
        self.begin_fit()
        self.begin_epoch()

    @property
    def metric_names(self) -> list[str]:
        return ["epoch", "train_loss", "valid_loss"] + [m.name for m in self.metrics]

    def begin_fit(self):
        self.log, self.values = [], []
        self._avg, self._count, self._iter = 0.0, 0, 0

    def begin_epoch(self):
        self._train_loss = AvgLoss()
        self._train_loss.reset()
        self._valid_loss = AvgLoss()
        self._valid_loss.reset()
        for m in self.metrics:
            m.reset()

    def begin_validate(self):
        self._valid_loss.reset()
        for m in self.metrics:
            m.reset()

    def after_batch(self):
        loss = self.learn.loss
        if loss is None:
            return
        n = _batch_size(self.learn.yb)
        value = float(loss.item() if isinstance(loss, Tensor) else loss)
        if self.learn.training:
            self._train_loss.accumulate(value, n)
            self._count += 1
            self._avg = self.beta * self._avg + (1 - self.beta) * value
            smooth = self._avg / (1 - self.beta ** self._count)
            h = self.learn.opt.hypers[-1]
            self.log.append((self._iter, h.get("lr", math.nan), h.get("mom", math.nan), value, smooth))
            self._iter += 1
        else:
            self._valid_loss.accumulate(value, n)
            for m in self.metrics:
                m.accumulate(self.learn.pred, self.learn.yb[0])

    def after_epoch(self):
        row = {"epoch": self.learn.epoch, "train_loss": self._train_loss.value,
               "valid_loss": self._valid_loss.value}
        for m in self.metrics:
            row[m.name] = m.value
        self.values.append(row)
        self.learn.logger.info(self.format_row(row))

    @property
    def lrs(self):
        return [r[1] for r in self.log]

    @property
    def moms(self):
        return [r[2] for r in self.log]

    @property
    def losses(self):
        return [r[3] for r in self.log]

    @property
    def smooth_losses(self):
        return [r[4] for r in self.log]

    def format_row(self, row: dict) -> str:
        cells = []
        for k in self.metric_names:
            v = row.get(k)
            cells.append(f"{v:<12d}" if isinstance(v, int) else
                         f"{'-':<12}" if v is None else f"{v:<12.6f}")
        return "".join(cells).rstrip()

    def metrics_table(self) -> str:
        header = "".join(f"{n:<12}" for n in self.metric_names).rstrip()
        return "\n".join([header] + [self.format_row(r) for r in self.values])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "lr", "mom", "loss", "smooth_loss"])
            for r in self.log:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])

    def metrics_to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.metric_names)
            for r in self.values:
                w.writerow(["" if r.get(k) is None else repr(r.get(k)) for k in self.metric_names])


def _batch_size(yb) -> int:
    for y in yb:
        return len(y)
    return 1


class MixUp(Callback):
    """Blend each training batch with a shuffled copy of itself.

    lambda ~ Beta(alpha, alpha) folded to max(lambda, 1 - lambda). Inputs
    become ``lam * x + (1 - lam) * x[perm]``; the loss becomes
    ``lam * loss(pred, y) + (1 - lam) * loss(pred, y[perm])``.
    """

    def __init__(self, alpha: float = 0.4, seed: int | None = None, lam: float | None = None):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.alpha = alpha
        self.rng = np.random.default_rng(seed)
        self.fixed_lam = lam

    def sample_lambda(self) -> float:
        if self.fixed_lam is not None:
            return self.fixed_lam
        lam = float(self.rng.beta(self.alpha, self.alpha))
        return max(lam, 1 - lam)

    def begin_batch(self):
        self._active = self.learn.training and len(self.learn.yb) > 0
        if not self._active:
            return
        self.lam = lam = self.sample_lambda()
        n = len(self.learn.xb[0])
        self.perm = self.rng.permutation(n)
        x = self.learn.xb[0]
        xd = x.data
        self.learn.xb = (Tensor(lam * xd + (1 - lam) * xd[self.perm]),) + tuple(self.learn.xb[1:])
        self.yb_perm = tuple(Tensor(y.data[self.perm]) for y in self.learn.yb)

    def after_loss(self):
        if not getattr(self, "_active", False):
            return
        lam = self.lam
        other = self.learn.loss_func(self.learn.pred, *self.yb_perm)
        self.learn.loss = self.learn.loss * lam + other * (1 - lam)
