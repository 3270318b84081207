"""Generic optimizer built from stats and steppers.

A step runs, for every trainable parameter:

1. grad-stage steppers (``l2_reg``), which rewrite the gradient,
2. every stat's ``update`` (moving averages, step counter),
3. param-stage steppers in order; each returns a delta that is added to the
   parameter before the next stepper runs.

SGD, momentum, Adam, AdamW and LAMB below are only different lists.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import LengthMismatch, MissingGrad
from .tensor import Tensor


@dataclass
class Stat:
    name: str
    init: Callable[[np.ndarray], dict]
    update: Callable[[dict, np.ndarray, dict], dict]


@dataclass
class Stepper:
    name: str
    fn: Callable
    stage: str = "param"  # "grad": fn(p, g, hypers) -> g'; "param": fn(p, g, state, hypers) -> delta


# stats

average_grad = Stat(
    "grad_avg",
    lambda p: {"grad_avg": np.zeros_like(p)},
    lambda s, g, h: {"grad_avg": h["mom"] * s["grad_avg"] + (1 - h["mom"]) * g})

average_sqr_grad = Stat(
    "sqr_avg",
    lambda p: {"sqr_avg": np.zeros_like(p)},
    lambda s, g, h: {"sqr_avg": h["sqr_mom"] * s["sqr_avg"] + (1 - h["sqr_mom"]) * g * g})

step_stat = Stat("step", lambda p: {"step": 0}, lambda s, g, h: {"step": s["step"] + 1})


# steppers

def _sgd(p, g, state, h):
    return -h["lr"] * g


def _momentum(p, g, state, h):
    return -h["lr"] * state["grad_avg"]


def _l2(p, g, h):
    return g + h["wd"] * p


def _weight_decay(p, g, state, h):
    return -h["lr"] * h["wd"] * p


def _adam_update(state, h):
    t = state["step"]
    m_hat = state["grad_avg"] / (1 - h["mom"] ** t)
    v_hat = state["sqr_avg"] / (1 - h["sqr_mom"] ** t)
    return m_hat / (np.sqrt(v_hat) + h["eps"])


def _adam(p, g, state, h):
    return -h["lr"] * _adam_update(state, h)


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(a * a)))


def trust_ratio(r1: float, r2: float, clip: float) -> float:
    """Layer-wise LAMB trust ratio: min(r1 / r2, clip), or 1 if either norm is zero."""
    if r1 == 0 or r2 == 0:
        return 1.0
    return min(r1 / r2, clip)


def _lamb(p, g, state, h):
    u = _adam_update(state, h)
    q = trust_ratio(_rms(p), _rms(u), h.get("clip", 10.0))
    return -h["lr"] * q * u


sgd_step = Stepper("sgd", _sgd)
momentum_step = Stepper("momentum", _momentum)
l2_reg = Stepper("l2_reg", _l2, stage="grad")
weight_decay = Stepper("weight_decay", _weight_decay)
adam_step = Stepper("adam", _adam)
lamb_step = Stepper("lamb", _lamb)


@dataclass
class ParamGroup:
    params: list[Tensor]
    hypers: dict
    frozen: bool = False
    state: dict = field(default_factory=dict)  # id(param) -> {stat name: value}


class Optimizer:
    """Parameter groups + a stat list + a stepper chain + per-group hypers.

    ``params`` is either a flat list of tensors (one group) or a list of
    lists (one group each, e.g. from a model splitter).
    """

    def __init__(self, params, stats: Sequence[Stat] = (), steppers: Sequence[Stepper] = (),
                 **hypers):
        params = list(params)
        groups = params if params and isinstance(params[0], (list, tuple)) else [params]
        self.groups = [ParamGroup(list(g), dict(hypers)) for g in groups]
        self.stats = list(stats)
        self.steppers = list(steppers)
        self.norm_exempt: set[int] = set()

    @property
    def hypers(self) -> list[dict]:
        return [g.hypers for g in self.groups]

    def all_params(self) -> list[Tensor]:
        return [p for g in self.groups for p in g.params]

    def trainable(self, group: ParamGroup, p: Tensor) -> bool:
        return not group.frozen or id(p) in self.norm_exempt

    def zero_grad(self) -> None:
        for p in self.all_params():
            p.grad = None

    def _state(self, group: ParamGroup, p: Tensor) -> dict:
        key = id(p)
        if key not in group.state:
            s = {}
            for stat in self.stats:
                s.update(stat.init(p.data))
            group.state[key] = s
        return group.state[key]

    def step(self) -> None:
        grad_steppers = [s for s in self.steppers if s.stage == "grad"]
        param_steppers = [s for s in self.steppers if s.stage != "grad"]
        for group in self.groups:
            h = group.hypers
            for p in group.params:
                if not self.trainable(group, p):
                    continue
                if p.grad is None:
                    raise MissingGrad(f"parameter of shape {p.shape} has no gradient")
                g = p.grad
                for st in grad_steppers:
                    g = st.fn(p.data, g, h)
                state = self._state(group, p)
                for stat in self.stats:
                    state.update(stat.update(state, g, h))
                for st in param_steppers:
                    p.data = p.data + st.fn(p.data, g, state, h)

    def set_hyper(self, name: str, value) -> None:
        """Set a hyper on every group; a list/tuple/array gives one value per group."""
        if isinstance(value, (list, tuple, np.ndarray)):
            if len(value) != len(self.groups):
                raise LengthMismatch(f"{len(value)} values for {len(self.groups)} groups")
            for g, v in zip(self.groups, value):
                g.hypers[name] = float(v)
        else:
            for g in self.groups:
                g.hypers[name] = value

    def freeze_to(self, k: int, norm_exempt: Iterable[Tensor] = ()) -> None:
        """Freeze groups [0, k); parameters in ``norm_exempt`` keep training."""
        n = len(self.groups)
        if k < 0:
            k += n
        if not 0 <= k <= n:
            raise ValueError(f"freeze_to({k}) with {n} groups")
        for i, g in enumerate(self.groups):
            g.frozen = i < k
        self.norm_exempt = {id(p) for p in norm_exempt}

    def unfreeze(self) -> None:
        self.freeze_to(0)

    def state_dict(self) -> dict:
        return {"hypers": copy.deepcopy(self.hypers),
                "frozen": [g.frozen for g in self.groups],
                "state": [copy.deepcopy(g.state) for g in self.groups],
                "norm_exempt": set(self.norm_exempt)}

    def load_state_dict(self, sd: dict) -> None:
        for g, h, f, s in zip(self.groups, sd["hypers"], sd["frozen"], sd["state"]):
            g.hypers, g.frozen, g.state = copy.deepcopy(h), f, copy.deepcopy(s)
        self.norm_exempt = set(sd["norm_exempt"])


# factories

def SGD(params, lr: float = 0.1, mom: float = 0.0, wd: float = 0.0, decouple_wd: bool = True) -> Optimizer:
    stats = [average_grad] if mom else []
    steppers = [weight_decay] if decouple_wd else [l2_reg]
    steppers.append(momentum_step if mom else sgd_step)
    return Optimizer(params, stats, steppers, lr=lr, mom=mom, wd=wd)


def Adam(params, lr: float = 1e-3, mom: float = 0.9, sqr_mom: float = 0.99, eps: float = 1e-5,
         wd: float = 0.0, decouple_wd: bool = True) -> Optimizer:
    steppers = [weight_decay] if decouple_wd else [l2_reg]
    return Optimizer(params, [average_grad, average_sqr_grad, step_stat], steppers + [adam_step],
                     lr=lr, mom=mom, sqr_mom=sqr_mom, eps=eps, wd=wd)


def AdamW(params, lr: float = 1e-3, mom: float = 0.9, sqr_mom: float = 0.99, eps: float = 1e-5,
          wd: float = 0.01) -> Optimizer:
    return Adam(params, lr, mom, sqr_mom, eps, wd, decouple_wd=True)


def LAMB(params, lr: float = 1e-3, mom: float = 0.9, sqr_mom: float = 0.99, eps: float = 1e-5,
         wd: float = 0.0, clip: float = 10.0) -> Optimizer:
    return Optimizer(params, [average_grad, average_sqr_grad, step_stat], [weight_decay, lamb_step],
                     lr=lr, mom=mom, sqr_mom=sqr_mom, eps=eps, wd=wd, clip=clip)


OPTIMIZERS = {"sgd": SGD, "adam": Adam, "adamw": AdamW, "lamb": LAMB}
