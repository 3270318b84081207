"""Semantic types, items, and two-argument type dispatch.

Types form a single-inheritance tree rooted at ``Any``. A ``DispatchTable``
maps ``(x_type, y_type)`` pairs to functions; lookup picks the applicable
entry that is closest to ``x``'s type, breaking ties by closeness to ``y``'s.
"""
from __future__ import annotations

import numbers
from dataclasses import dataclass
from typing import Any as _Any, Callable

import numpy as np

from .errors import NoMatch, UnknownType
from .tensor import Tensor

ANY = "Any"


class TypeHierarchy:
    """A single-inheritance tree of type ids."""

    def __init__(self):
        self._parent: dict[str, str | None] = {ANY: None}

    def add(self, type_id: str, parent: str = ANY) -> str:
        if parent not in self._parent:
            raise UnknownType(parent)
        if type_id == ANY:
            raise ValueError("Any is the fixed root")
        self._parent[type_id] = parent
        return type_id

    def __contains__(self, type_id) -> bool:
        return type_id in self._parent

    def check(self, type_id: str) -> str:
        if type_id not in self._parent:
            raise UnknownType(type_id)
        return type_id

    def parent(self, type_id: str) -> str | None:
        return self._parent[self.check(type_id)]

    def ancestors(self, type_id: str) -> list[str]:
        """``type_id`` followed by its parents up to ``Any``."""
        out = [self.check(type_id)]
        while self._parent[out[-1]] is not None:
            out.append(self._parent[out[-1]])
        return out

    def distance(self, type_id: str, ancestor: str) -> int | None:
        """Steps from ``type_id`` up to ``ancestor``, or None if unrelated."""
        chain = self.ancestors(type_id)
        return chain.index(ancestor) if ancestor in chain else None

    def is_subtype(self, a: str, b: str) -> bool:
        return self.distance(a, b) is not None


types = TypeHierarchy()
for _t, _p in [("Number", ANY), ("Integral", "Number"), ("Int", "Integral"), ("Float", "Number"),
               ("ImageArray", ANY), ("MaskArray", ANY), ("Category", ANY),
               ("ContinuousVector", ANY), ("BBoxList", ANY)]:
    types.add(_t, _p)


@dataclass
class Item:
    """A payload tagged with its semantic type."""
    semantic: str
    payload: _Any

    def __post_init__(self):
        types.check(self.semantic)


def payload_kind(payload) -> str:
    if isinstance(payload, (Tensor, np.ndarray)):
        return "tensor"
    if isinstance(payload, str):
        return "str"
    if isinstance(payload, (bool, np.bool_)):
        return "other"
    if isinstance(payload, numbers.Integral):
        return "int"
    if isinstance(payload, numbers.Real):
        return "float"
    if isinstance(payload, (list, tuple)):
        return "list"
    return "other"


def type_of(x) -> str:
    """Semantic type of an Item or a plain Python value."""
    if isinstance(x, Item):
        return x.semantic
    if isinstance(x, str):
        return x if x in types else ANY
    kind = payload_kind(x)
    return {"int": "Int", "float": "Float"}.get(kind, ANY)


def payload(x):
    return x.payload if isinstance(x, Item) else x


class DispatchTable:
    """Registry of functions keyed on the semantic types of two arguments."""

    def __init__(self, name: str = "dispatch", hierarchy: TypeHierarchy | None = None):
        self.name = name
        self.hierarchy = hierarchy or types
        self.entries: dict[tuple[str, str], Callable] = {}

    def register(self, x_type: str, y_type: str = ANY, fn: Callable | None = None):
        """Store ``fn`` for the pair; usable as a decorator when ``fn`` is omitted."""
        self.hierarchy.check(x_type)
        self.hierarchy.check(y_type)
        if fn is None:
            def deco(f):
                self.entries[(x_type, y_type)] = f
                return f
            return deco
        self.entries[(x_type, y_type)] = fn
        return fn

    def __len__(self):
        return len(self.entries)

    def lookup(self, x_type: str, y_type: str = ANY) -> Callable:
        h = self.hierarchy
        best, best_key = None, None
        for (tx, ty), fn in self.entries.items():
            dx, dy = h.distance(x_type, tx), h.distance(y_type, ty)
            if dx is None or dy is None:
                continue
            if best_key is None or (dx, dy) < best_key:
                best, best_key = fn, (dx, dy)
        if best is None:
            raise NoMatch(f"{self.name}: no entry for ({x_type}, {y_type})")
        return best

    def dispatch(self, x, y=None) -> Callable:
        return self.lookup(type_of(x), ANY if y is None else type_of(y))

    def __call__(self, x, y=None, *args, **kwargs):
        return self.dispatch(x, y)(x, y, *args, **kwargs)


def retain_type(result, source):
    """Give ``result`` the semantic type of ``source`` when it lost it.

    Only applies when ``result``'s type is a strict ancestor of ``source``'s and
    the payloads are of the same kind. Plain values count as ``Any``.
    """
    if not isinstance(source, Item):
        return result
    res_type = type_of(result) if isinstance(result, Item) else ANY
    if res_type == source.semantic or not types.is_subtype(source.semantic, res_type):
        return result
    value = payload(result)
    if payload_kind(value) != payload_kind(source.payload):
        return result
    return Item(source.semantic, value)
