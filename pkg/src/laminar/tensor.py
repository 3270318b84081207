"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every differentiable op executed while recording is enabled appends a node to
the thread-local tape. ``backward`` walks the tape once in reverse insertion
order, accumulates into the ``grad`` buffers of leaf tensors and then clears
the tape.
"""
from __future__ import annotations

import builtins
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, EmptyReduction, NoTape, NotScalar, ShapeMismatch

__all__ = [
    "Tensor", "tensor", "zeros", "ones", "no_grad", "is_recording", "backward",
    "add", "sub", "mul", "div", "pow", "neg", "exp", "log", "sqrt", "relu", "clamp",
    "matmul", "sum", "mean", "max", "rms", "reshape", "transpose", "take", "concat",
    "log_softmax", "softmax", "cross_entropy", "mse", "set_seed", "get_rng",
]


@dataclass
class _Node:
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    generation: int = 0

    def clear(self) -> None:
        self.nodes.clear()
        self.generation += 1


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_state = _State()


def get_tape() -> Tape:
    return _state.tape


def is_recording() -> bool:
    return _state.enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


_rng = np.random.default_rng(0)


def set_seed(seed: int) -> None:
    """Reseed the generator used for default parameter initialisation."""
    global _rng
    _rng = np.random.default_rng(seed)


def get_rng() -> np.random.Generator:
    return _rng


class Tensor:
    """A dense row-major float64 array, optionally tracked by the tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: tuple[int, int] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    # arithmetic sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __pow__(self, o): return pow(self, o)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return take(self, idx)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def max(self, axis=None, keepdims=False): return max(self, axis, keepdims)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def sqrt(self): return sqrt(self)
    def relu(self): return relu(self)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self): return transpose(self)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad)


def ones(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: np.ndarray, inputs: tuple, bwd) -> Tensor:
    res = Tensor.__new__(Tensor)
    res.data = out
    res.grad = None
    res.node_id = None
    res.requires_grad = False
    if _state.enabled and any(t.requires_grad for t in inputs):
        tape = _state.tape
        res.requires_grad = True
        res.node_id = (tape.generation, len(tape.nodes))
        tape.nodes.append(_Node(op, inputs, bwd))
    return res


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # sum over leading axes added by broadcasting, then over stretched size-1 axes
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op, a, b, fwd, grads):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    out = fwd(a.data, b.data)

    def bwd(g):
        ga, gb = grads(g, a.data, b.data, out)
        return (_unbroadcast(ga, a.shape) if a.requires_grad else None,
                _unbroadcast(gb, b.shape) if b.requires_grad else None)

    return _record(op, out, (a, b), bwd)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y, o: (g, g))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: (g, -g))


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: (g * y, g * x))


def div(a, b) -> Tensor:
    return _binary("div", a, b, np.divide, lambda g, x, y, o: (g / y, -g * x / (y * y)))


def pow(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if b.requires_grad and _state.enabled and np.any(a.data <= 0):
        raise DomainError("pow with a differentiable exponent needs a positive base")

    def grads(g, x, y, o):
        ga = g * y * np.power(x, y - 1)
        gb = g * o * np.log(x) if b.requires_grad else np.zeros_like(o)
        return ga, gb

    return _binary("pow", a, b, np.power, grads)


def _unary(op, a, fwd, grad):
    a = _as_tensor(a)
    out = fwd(a.data)
    return _record(op, out, (a,), lambda g: (grad(g, a.data, out),))


def neg(a) -> Tensor:
    return _unary("neg", a, np.negative, lambda g, x, o: -g)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def _check_positive(a: Tensor, name: str) -> None:
    if a.requires_grad and _state.enabled and np.any(a.data <= 0):
        raise DomainError(f"{name} of non-positive input is not differentiable")


def log(a) -> Tensor:
    a = _as_tensor(a)
    _check_positive(a, "log")
    with np.errstate(divide="ignore", invalid="ignore"):
        return _unary("log", a, np.log, lambda g, x, o: g / x)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    _check_positive(a, "sqrt")
    with np.errstate(invalid="ignore"):
        return _unary("sqrt", a, np.sqrt, lambda g, x, o: g / (2.0 * o))


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda g, x, o: g * (x > 0))


def clamp(a, lo=None, hi=None) -> Tensor:
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    return _unary("clamp", a, lambda x: np.clip(x, lo_, hi_),
                  lambda g, x, o: g * ((x >= lo_) & (x <= hi_)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _record("matmul", out, (a, b), lambda g: (
        g @ b.data.T if a.requires_grad else None,
        a.data.T @ g if b.requires_grad else None))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < builtins.max(ndim, 1):
            raise ShapeMismatch(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim if ndim else 0)
    return tuple(sorted(set(out)))


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return _record("sum", np.asarray(out), (a,),
                   lambda g: (_expand(g, a.shape, axes, keepdims).copy(),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise EmptyReduction(f"mean over empty axes of shape {a.shape}")
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    return _record("mean", np.asarray(out), (a,),
                   lambda g: (_expand(g, a.shape, axes, keepdims) / count,))


def max(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    if any(a.shape[ax] == 0 for ax in axes) or a.size == 0:
        raise EmptyReduction(f"max over empty axes of shape {a.shape}")
    out = np.max(a.data, axis=axes, keepdims=keepdims)

    def bwd(g):
        full = np.max(a.data, axis=axes, keepdims=True)
        mask = (a.data == full).astype(np.float64)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (_expand(g, a.shape, axes, keepdims) * mask,)

    return _record("max", np.asarray(out), (a,), bwd)


def rms(a, axis=None) -> Tensor:
    """Root mean square, sqrt(mean(a**2))."""
    return sqrt(mean(mul(a, a), axis))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def take(a, idx) -> Tensor:
    """Basic or integer-array indexing with a scatter-add backward."""
    a = _as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    out = np.array(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record("take", out, (a,), bwd)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", out, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


def _targets(targets, n, c) -> np.ndarray:
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    t = t.reshape(-1)
    if t.shape[0] != n:
        raise ShapeMismatch(f"{t.shape[0]} targets for {n} rows")
    ti = t.astype(np.int64)
    if np.any(ti != t) or np.any(ti < 0) or np.any(ti >= c):
        raise IndexError(f"targets must be integers in [0, {c})")
    return ti


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects (n, c) logits, got {logits.shape}")
    n, c = logits.shape
    t = _targets(targets, n, c)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    out = np.asarray(-lsm[rows, t].mean())

    def bwd(g):
        d = np.exp(lsm)
        d[rows, t] -= 1.0
        return (d * (g / n),)

    return _record("cross_entropy", out, (logits,), bwd)


def mse(pred, targ) -> Tensor:
    pred, targ = _as_tensor(pred), _as_tensor(targ)
    if pred.shape != targ.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {targ.shape}")
    d = sub(pred, targ)
    return mean(mul(d, d))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if loss.node_id is None or loss.node_id[0] != tape.generation:
        raise NoTape("loss was not recorded on the active tape")
    gen = tape.generation
    grads = {loss.node_id[1]: np.ones_like(loss.data)}
    for idx in range(loss.node_id[1], -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node_id is not None and inp.node_id[0] == gen:
                j = inp.node_id[1]
                grads[j] = grads[j] + gi if j in grads else np.array(gi, dtype=np.float64)
            else:
                inp.accumulate_grad(gi)
    tape.clear()
