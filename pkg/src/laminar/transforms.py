"""Invertible, setup-aware, split-aware transforms and their compositions."""
from __future__ import annotations

from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .dispatch import ANY, Item, payload, payload_kind, retain_type, type_of, types
from .errors import (ArchiveError, EmptySetupSample, IndexOutOfRange, LabelNotFound,
                     TransformError)
from .tensor import Tensor

TRAIN, VALID = 0, 1

_registry: dict[str, type] = {}


def register_transform(cls):
    """Make a Transform subclass restorable from an export manifest."""
    _registry[cls.__name__] = cls
    return cls


class Transform:
    """A callable processing step with optional ``decodes`` and ``setups``.

    Subclasses override ``encodes``/``decodes``/``setups``; plain functions can
    be wrapped with ``Transform(enc, dec)``. When ``split_idx`` is set the
    transform only fires on that split. ``accepts`` restricts which semantic
    types are touched; anything else passes through. ``whole_tuple``
    transforms receive a full (input, target...) tuple instead of elements.
    """

    split_idx: int | None = None
    accepts: tuple[str, ...] | None = None
    whole_tuple = False

    def __init__(self, enc: Callable | None = None, dec: Callable | None = None,
                 split_idx: int | None = None, name: str | None = None,
                 accepts: Sequence[str] | None = None):
        if enc is not None:
            self.encodes = enc
        if dec is not None:
            self.decodes = dec
        if split_idx is not None:
            self.split_idx = split_idx
        if accepts is not None:
            self.accepts = tuple(accepts)
        self._name = name or getattr(enc, "__name__", None) or type(self).__name__

    @property
    def name(self) -> str:
        return self._name

    def __repr__(self):
        return f"{self.name}"

    def encodes(self, x):
        return x

    def setups(self, items: list) -> None:
        pass

    @property
    def has_setups(self) -> bool:
        return type(self).setups is not Transform.setups

    @property
    def has_decodes(self) -> bool:
        return "decodes" in self.__dict__ or type(self).decodes is not Transform.decodes

    def decodes(self, x):
        return x

    def setup(self, items: list) -> None:
        self.setups(items)

    def accepts_item(self, x) -> bool:
        if self.accepts is None:
            return True
        t = type_of(x)
        return any(types.is_subtype(t, a) for a in self.accepts)

    def active(self, split_idx: int | None) -> bool:
        return self.split_idx is None or self.split_idx == split_idx

    def __call__(self, x, split_idx: int | None = None):
        if not self.active(split_idx) or not self.accepts_item(x):
            return x
        return retain_type(self.encodes(x), x)

    def decode(self, x):
        if not self.has_decodes or not self.accepts_item(x):
            return x
        return retain_type(self.decodes(x), x)

    # serialization
    def get_state(self) -> dict:
        return {}

    def set_state(self, state: dict) -> None:
        pass

    @property
    def exportable(self) -> bool:
        return _registry.get(type(self).__name__) is type(self)

    def to_manifest(self) -> dict:
        cls = type(self).__name__
        if not self.exportable:
            raise ArchiveError(f"transform {self.name!r} ({cls}) is not exportable")
        return {"type": cls, "split_idx": self.split_idx, "state": self.get_state()}

    @staticmethod
    def from_manifest(entry: dict) -> "Transform":
        try:
            cls = _registry[entry["type"]]
        except KeyError:
            raise ArchiveError(f"unknown transform type {entry.get('type')!r}") from None
        t = cls.__new__(cls)
        Transform.__init__(t, split_idx=entry.get("split_idx"))
        t.set_state(entry.get("state", {}))
        return t


def _elementwise(t: Transform, xs: tuple, fn: Callable) -> tuple:
    if t.whole_tuple:
        return fn(xs)
    return tuple(fn(x) for x in xs)


class Pipeline:
    """An ordered composition of transforms.

    ``tuples=True`` pipelines operate on (input, target...) tuples, applying
    each transform to every element (or to the whole tuple for
    ``whole_tuple`` transforms).
    """

    def __init__(self, tfms: Iterable[Transform | Callable] = (), split_idx: int | None = None,
                 tuples: bool = False):
        self.transforms = [t if isinstance(t, Transform) else Transform(t) for t in tfms]
        self.split_idx = split_idx
        self.tuples = tuples

    def __repr__(self):
        return f"Pipeline({' -> '.join(t.name for t in self.transforms)})"

    def __len__(self):
        return len(self.transforms)

    def add(self, tfms: Iterable[Transform]) -> "Pipeline":
        self.transforms.extend(t if isinstance(t, Transform) else Transform(t) for t in tfms)
        return self

    def _apply_one(self, t: Transform, x, split_idx, index=None):
        try:
            if self.tuples:
                return _elementwise(t, x, lambda e: t(e, split_idx))
            return t(x, split_idx)
        except TransformError:
            raise
        except Exception as e:
            raise TransformError(t.name, e, index) from e

    def setup(self, items: Sequence, split_idx: int = TRAIN, indices: Sequence[int] | None = None) -> None:
        """Set up each transform on data already passed through the earlier ones."""
        sample = list(items)
        indices = list(indices) if indices is not None else [None] * len(sample)
        if not sample:
            raise EmptySetupSample("pipeline setup needs at least one item")
        last = max((i for i, t in enumerate(self.transforms) if t.has_setups), default=-1)
        for i, t in enumerate(self.transforms[:last + 1]):
            if t.has_setups:
                t.setup(self._setup_view(t, sample))
            if i < last:
                sample = [self._apply_one(t, x, split_idx, j) for x, j in zip(sample, indices)]

    def _setup_view(self, t: Transform, sample: list) -> list:
        if not self.tuples or t.whole_tuple:
            return sample
        return [e for tup in sample for e in tup if t.accepts_item(e)]

    def __call__(self, x, split_idx: int | None = None, index: int | None = None):
        split = self.split_idx if split_idx is None else split_idx
        for t in self.transforms:
            x = self._apply_one(t, x, split, index)
        return x

    def decode(self, x):
        for t in reversed(self.transforms):
            if not t.has_decodes:
                continue
            try:
                x = _elementwise(t, x, t.decode) if self.tuples else t.decode(x)
            except TransformError:
                raise
            except Exception as e:
                raise TransformError(t.name, e) from e
        return x

    def to_manifest(self) -> list:
        return [t.to_manifest() for t in self.transforms]

    @classmethod
    def from_manifest(cls, entries: list, tuples: bool = False) -> "Pipeline":
        return cls([Transform.from_manifest(e) for e in entries], tuples=tuples)


# built-in transforms

@register_transform
class Categorize(Transform):
    """Label string <-> integer index, vocab sorted from the setup labels."""

    def __init__(self, vocab: Sequence[str] | None = None, **kwargs):
        super().__init__(**kwargs)
        self.vocab: list[str] | None = None
        if vocab is not None:
            self._set_vocab(list(vocab))

    def _set_vocab(self, vocab):
        self.vocab = vocab
        self.lookup = {v: i for i, v in enumerate(vocab)}

    def setups(self, items):
        self._set_vocab(sorted({str(payload(x)) for x in items}))

    def encodes(self, x):
        label = str(payload(x))
        try:
            return Item("Category", self.lookup[label])
        except KeyError:
            raise LabelNotFound(f"label {label!r} not in vocab {self.vocab}") from None

    def decodes(self, x):
        idx = payload(x)
        if isinstance(idx, Tensor):
            idx = idx.item()
        return Item("Category", self.vocab[int(round(float(idx)))])

    def get_state(self):
        return {"vocab": self.vocab}

    def set_state(self, state):
        self._set_vocab(list(state["vocab"]))


def _as_array(x) -> np.ndarray:
    v = payload(x)
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


@register_transform
class Normalize(Transform):
    """Per-feature standardisation, ``(x - mean) / std``.

    The feature axis is axis 0 of a single item (the vector component, or the
    channel of an image) and axis 1 of a batch. Setup uses the population std
    with a floor of 1e-8.
    """

    accepts = ("ContinuousVector", "ImageArray", "Number")

    def __init__(self, mean=None, std=None, item_rank: int | None = None, **kwargs):
        super().__init__(**kwargs)
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)
        if item_rank is None and self.mean is not None:
            item_rank = self.mean.ndim
        self.item_rank = item_rank

    def setups(self, items):
        arrs = [_as_array(x) for x in items]
        if not arrs:
            raise EmptySetupSample("Normalize setup saw no accepted items")
        stacked = np.stack(arrs)
        self.item_rank = stacked.ndim - 1
        axes = (0,) + tuple(range(2, stacked.ndim))
        self.mean = stacked.mean(axis=axes)
        self.std = np.maximum(stacked.std(axis=axes), 1e-8)

    def _stats(self, x: np.ndarray):
        if self.mean.ndim == 0:
            return self.mean, self.std
        axis = 0 if x.ndim == self.item_rank else 1
        shape = [1] * x.ndim
        shape[axis] = self.mean.shape[0]
        return self.mean.reshape(shape), self.std.reshape(shape)

    def _map(self, x, fn):
        v = payload(x)
        arr = _as_array(v)
        out = fn(arr, *self._stats(arr))
        if isinstance(v, Tensor):
            out = Tensor(out)
        elif arr.ndim == 0:
            out = float(out)
        return Item(x.semantic, out) if isinstance(x, Item) else out

    def encodes(self, x):
        return self._map(x, lambda a, m, s: (a - m) / s)

    def decodes(self, x):
        return self._map(x, lambda a, m, s: a * s + m)

    def get_state(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "item_rank": self.item_rank}

    def set_state(self, state):
        self.mean = np.asarray(state["mean"], dtype=np.float64)
        self.std = np.asarray(state["std"], dtype=np.float64)
        self.item_rank = state["item_rank"]


@register_transform
class ToVector(Transform):
    """Sequence of numbers -> ContinuousVector item, optionally length-checked."""

    def __init__(self, dim: int | None = None, **kwargs):
        super().__init__(**kwargs)
        self.dim = dim

    def encodes(self, x):
        v = np.asarray(payload(x), dtype=np.float64).reshape(-1)
        if self.dim is not None and v.shape[0] != self.dim:
            raise ValueError(f"expected a vector of length {self.dim}, got {v.shape[0]}")
        return Item("ContinuousVector", Tensor(v))

    def decodes(self, x):
        return x

    def get_state(self):
        return {"dim": self.dim}

    def set_state(self, state):
        self.dim = state.get("dim")


@register_transform
class ColReader(Transform):
    """Pull one or more columns out of a mapping record."""

    def __init__(self, cols, **kwargs):
        super().__init__(**kwargs)
        self.cols = cols

    def encodes(self, record):
        if isinstance(self.cols, (list, tuple)):
            return [float(record[c]) for c in self.cols]
        return record[self.cols]

    def get_state(self):
        return {"cols": self.cols}

    def set_state(self, state):
        self.cols = state["cols"]


# lazy collections

class Subset:
    """One split of a TfmdLists/Datasets; indexes lazily."""

    def __init__(self, parent, split: int):
        self.parent, self.split_idx = parent, split
        self.idxs = parent.splits[split]

    def __len__(self):
        return len(self.idxs)

    def __getitem__(self, i):
        return self.parent.get(self.split_idx, i)

    def decode(self, x):
        return self.parent.decode(x)

    @property
    def n_inp(self):
        return getattr(self.parent, "n_inp", 1)


class TfmdLists:
    """A collection viewed through a pipeline, transformed on access."""

    def __init__(self, items: Sequence, tfms, splits: Sequence[Sequence[int]] | None = None,
                 do_setup: bool = True):
        self.items = list(items)
        self.pipeline = tfms if isinstance(tfms, Pipeline) else Pipeline(tfms)
        self.splits = [list(s) for s in splits] if splits is not None else [list(range(len(self.items)))]
        if do_setup:
            self.setup()

    def setup(self):
        idxs = self.splits[TRAIN]
        self.pipeline.setup([self.items[i] for i in idxs], TRAIN, idxs)

    def _index(self, subset: int, i: int) -> int:
        if not 0 <= subset < len(self.splits):
            raise IndexOutOfRange(f"subset {subset} of {len(self.splits)}")
        idxs = self.splits[subset]
        if not -len(idxs) <= i < len(idxs):
            raise IndexOutOfRange(f"index {i} in subset {subset} of length {len(idxs)}")
        return idxs[i]

    def get(self, subset: int, i: int):
        j = self._index(subset, i)
        return self.pipeline(self.items[j], split_idx=subset, index=j)

    def subset(self, i: int) -> Subset:
        return Subset(self, i)

    @property
    def train(self) -> Subset:
        return self.subset(TRAIN)

    @property
    def valid(self) -> Subset:
        return self.subset(VALID)

    def __len__(self):
        return len(self.items)

    def decode(self, x):
        return self.pipeline.decode(x)


class Datasets:
    """Several pipelines applied in parallel to the same source items."""

    def __init__(self, items: Sequence, tfms: Sequence, splits=None, n_inp: int | None = None,
                 do_setup: bool = True):
        self.items = list(items)
        self.splits = [list(s) for s in splits] if splits is not None else [list(range(len(self.items)))]
        self.tls = [TfmdLists(self.items, p, self.splits, do_setup=do_setup) for p in tfms]
        self.n_inp = n_inp if n_inp is not None else max(1, len(self.tls) - 1)

    @property
    def pipelines(self) -> list[Pipeline]:
        return [tl.pipeline for tl in self.tls]

    def get(self, subset: int, i: int) -> tuple:
        return tuple(tl.get(subset, i) for tl in self.tls)

    def subset(self, i: int) -> Subset:
        return Subset(self, i)

    @property
    def train(self) -> Subset:
        return self.subset(TRAIN)

    @property
    def valid(self) -> Subset:
        return self.subset(VALID)

    def __len__(self):
        return len(self.items)

    def decode(self, xs: tuple) -> tuple:
        return tuple(tl.decode(x) for tl, x in zip(self.tls, xs))
