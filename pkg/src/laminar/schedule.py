"""Hyper-parameter schedules as callbacks: annealers, 1cycle, and the lr finder."""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .callback import Callback, CancelFitException, CancelValidException
from .errors import AllDiverged


def anneal_linear(start: float, end: float, p: float) -> float:
    return start + (end - start) * p


def anneal_cos(start: float, end: float, p: float) -> float:
    return end + (start - end) * (1 + math.cos(math.pi * p)) / 2


def anneal_exp(start: float, end: float, p: float) -> float:
    return start * (end / start) ** p


def anneal_no(start: float, end: float, p: float) -> float:
    return start


ANNEALERS: dict[str, Callable[[float, float, float], float]] = {
    "linear": anneal_linear, "cos": anneal_cos, "exp": anneal_exp, "no": anneal_no}


@dataclass(frozen=True)
class Anneal:
    kind: str
    start: float
    end: float

    def __post_init__(self):
        if self.kind not in ANNEALERS:
            raise ValueError(f"unknown annealer {self.kind!r}")

    def __call__(self, p: float) -> float:
        # endpoints are returned as configured, not recomputed
        if p <= 0:
            return self.start
        if p >= 1:
            return self.end if self.kind != "no" else self.start
        return ANNEALERS[self.kind](self.start, self.end, p)


@dataclass(frozen=True)
class Schedule:
    """Piecewise schedule: ``segments`` is a list of (fraction, Anneal); fractions sum to 1."""
    segments: tuple

    def __post_init__(self):
        fracs = [f for f, _ in self.segments]
        if not fracs or any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0):
            raise ValueError("segment fractions must be non-negative and sum to 1")

    def __call__(self, progress: float) -> float:
        return schedule_value(self, progress)


def schedule_value(sched: Schedule, progress: float) -> float:
    p = min(max(float(progress), 0.0), 1.0)
    lo = 0.0
    last = len(sched.segments) - 1
    for i, (frac, fn) in enumerate(sched.segments):
        hi = lo + frac
        if (p <= hi and frac > 0) or i == last:
            local = 1.0 if frac == 0 else (p - lo) / frac
            return fn(local)
        lo = hi
    raise AssertionError("unreachable")


def combined_sched(pcts: Sequence[float], annealers: Sequence[Anneal]) -> Schedule:
    return Schedule(tuple(zip(pcts, annealers)))


def one_cycle_scheds(lr_max: float, pct_start: float = 0.25, moms=(0.95, 0.85, 0.95),
                     div: float = 25.0, div_final: float = 1e5) -> tuple[Schedule, Schedule]:
    lr = combined_sched([pct_start, 1 - pct_start],
                        [Anneal("cos", lr_max / div, lr_max), Anneal("cos", lr_max, lr_max / div_final)])
    mom = combined_sched([pct_start, 1 - pct_start],
                         [Anneal("cos", moms[0], moms[1]), Anneal("cos", moms[1], moms[2])])
    return lr, mom


class ParamScheduler(Callback):
    """Sets opt hypers from schedules at each training begin_batch.

    ``scheds`` maps a hyper name to one Schedule (shared by all groups) or a
    list with one Schedule per parameter group. Progress for training
    iteration i of N is i / (N - 1), so the last batch sees progress 1.
    """

    def __init__(self, scheds: dict):
        self.scheds = scheds

    def begin_fit(self):
        self.total = self.learn.total_iters

    def progress(self) -> float:
        n = self.total
        return 1.0 if n is None or n <= 1 else self.learn.train_iter / (n - 1)

    def begin_batch(self):
        if not self.learn.training:
            return
        p = self.progress()
        for name, s in self.scheds.items():
            if isinstance(s, (list, tuple)):
                self.learn.opt.set_hyper(name, [schedule_value(x, p) for x in s])
            else:
                self.learn.opt.set_hyper(name, schedule_value(s, p))


def fit_one_cycle(learn, n_epoch: int, lr_max=None, pct_start: float = 0.25,
                  moms=(0.95, 0.85, 0.95), div: float = 25.0, div_final: float = 1e5,
                  wd: float | None = None, cbs: Sequence[Callback] = ()) -> None:
    """Fit with a cosine 1cycle lr schedule and the inverted momentum schedule.

    ``lr_max`` may be a list with one value per parameter group.
    """
    if n_epoch < 1:
        raise ValueError("n_epoch must be at least 1")
    if learn.opt is None:
        learn.create_opt()
    if lr_max is None:
        lr_max = learn.lr
    if isinstance(lr_max, (list, tuple, np.ndarray)):
        pairs = [one_cycle_scheds(float(v), pct_start, moms, div, div_final) for v in lr_max]
        scheds = {"lr": [p[0] for p in pairs], "mom": pairs[0][1]}
    else:
        lr_s, mom_s = one_cycle_scheds(float(lr_max), pct_start, moms, div, div_final)
        scheds = {"lr": lr_s, "mom": mom_s}
    learn.fit(n_epoch, wd=wd, cbs=[ParamScheduler(scheds), *cbs])


def lr_at(k: int, start_lr: float, end_lr: float, num_it: int) -> float:
    """Exponential ramp; k=0 gives start_lr and k=num_it gives end_lr exactly."""
    if k <= 0:
        return start_lr
    if k >= num_it:
        return end_lr
    return start_lr * (end_lr / start_lr) ** (k / num_it)


class LRFinder(Callback):
    """Ramp the lr exponentially each training batch; stop on divergence."""

    def __init__(self, start_lr: float = 1e-7, end_lr: float = 10.0, num_it: int = 100,
                 diverge_factor: float = 4.0, beta: float = 0.98):
        self.start_lr, self.end_lr, self.num_it = start_lr, end_lr, num_it
        self.diverge_factor, self.beta = diverge_factor, beta

    def begin_fit(self):
        self.k = 0
        self.avg, self.best = 0.0, math.inf
        self.lrs: list[float] = []
        self.smooth: list[float] = []

    def begin_batch(self):
        if self.learn.training:
            self.learn.opt.set_hyper("lr", lr_at(self.k, self.start_lr, self.end_lr, self.num_it))

    def after_batch(self):
        if not self.learn.training or self.learn.loss is None:
            return
        loss = float(self.learn.loss.item())
        lr = self.learn.opt.hypers[-1]["lr"]
        self.avg = self.beta * self.avg + (1 - self.beta) * loss
        smooth = self.avg / (1 - self.beta ** (self.k + 1))
        if not math.isfinite(smooth):
            if self.k == 0:
                raise AllDiverged("loss is not finite on the first lr_find iteration")
            raise CancelFitException()
        self.lrs.append(lr)
        self.smooth.append(smooth)
        self.best = min(self.best, smooth)
        self.k += 1
        if smooth > self.diverge_factor * self.best or self.k > self.num_it:
            raise CancelFitException()

    def begin_validate(self):
        raise CancelValidException()


def _snapshot(learn) -> dict:
    params = [t.data.copy() for _, t in _state(learn.model)]
    return {
        "params": params,
        "opt": learn.opt.state_dict() if learn.opt is not None else None,
        "has_opt": learn.opt is not None,
        "epochs": [getattr(dl, "epoch", None) for dl in (learn.dls.train, learn.dls.valid)],
        "rng": copy.deepcopy(T.get_rng().bit_generator.state),
        "recorder": (list(learn.recorder.log), list(learn.recorder.values)),
        "training": learn.model.training,
    }


def _state(model):
    from .nn import state_tensors
    return state_tensors(model)


def _restore(learn, snap: dict) -> None:
    for (_, t), d in zip(_state(learn.model), snap["params"]):
        t.data = d
        t.grad = None
    if snap["has_opt"]:
        learn.opt.load_state_dict(snap["opt"])
        learn.opt.zero_grad()
    else:
        learn.opt = None
    for dl, e in zip((learn.dls.train, learn.dls.valid), snap["epochs"]):
        if e is not None:
            dl.epoch = e
    T.get_rng().bit_generator.state = snap["rng"]
    learn.recorder.log, learn.recorder.values = snap["recorder"]
    learn.model.train(snap["training"])


def lr_find(learn, start_lr: float = 1e-7, end_lr: float = 10.0, num_it: int = 100,
            diverge_factor: float = 4.0, csv_path=None, cbs: Sequence[Callback] = ()):
    """Mock training with an exponential lr ramp over ``num_it`` steps.

    Returns (suggested lr, [(lr, smoothed loss), ...]). The suggestion is the
    lr at the minimum smoothed loss divided by 10. Model weights, optimizer
    state, loader epochs and the global RNG are restored afterwards.
    """
    if not 0 < start_lr < end_lr:
        raise ValueError("need 0 < start_lr < end_lr")
    n = len(learn.dls.train)
    if n == 0:
        raise ValueError("lr_find needs at least one training batch")
    snap = _snapshot(learn)
    finder = LRFinder(start_lr, end_lr, num_it, diverge_factor)
    try:
        learn.fit(math.ceil((num_it + 1) / n), cbs=[finder, *cbs])
    finally:
        _restore(learn, snap)
    trace = list(zip(finder.lrs, finder.smooth))
    if not trace:
        raise AllDiverged("lr_find recorded no finite loss")
    best = int(np.argmin(finder.smooth))
    suggestion = finder.lrs[best] / 10
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["lr", "smooth_loss"])
            for lr, s in trace:
                w.writerow([repr(lr), repr(s)])
    return suggestion, trace
