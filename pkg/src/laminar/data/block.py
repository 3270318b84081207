"""Declarative data assembly: items, split, labels, processing."""
from __future__ import annotations

import copy
import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import EmptyItems, EmptyTrainSplit, GetterError, NoMatch, TransformError
from ..transforms import Categorize, Datasets, Pipeline, ToVector, Transform
from .image import LoadImage, LoadMask
from .load import DataLoaders


@dataclass
class TransformBlock:
    """What a block contributes: type transforms, item/batch transforms, default loss."""
    type_tfms: list = field(default_factory=list)
    item_tfms: list = field(default_factory=list)
    batch_tfms: list = field(default_factory=list)
    loss: str | None = None
    kind: str = "Block"


def CategoryBlock() -> TransformBlock:
    return TransformBlock(type_tfms=[Categorize()], loss="cross_entropy", kind="CategoryBlock")


def VectorBlock(dim: int) -> TransformBlock:
    return TransformBlock(type_tfms=[ToVector(dim)], loss="mse", kind="VectorBlock")


def ImageBlock(channels: int = 1) -> TransformBlock:
    return TransformBlock(type_tfms=[LoadImage()], kind="ImageBlock")


def MaskBlock(codes: Sequence[str] | None = None) -> TransformBlock:
    b = TransformBlock(type_tfms=[LoadMask()], kind="MaskBlock")
    b.codes = list(codes) if codes else None
    return b


# labelling

def parent_label(path) -> str:
    parts = Path(path).parts
    if len(parts) < 2:
        raise ValueError(f"{path!s} has no parent directory")
    return parts[-2]


def regex_label(pattern: str, path) -> str:
    rx = re.compile(pattern)
    if rx.groups != 1:
        raise ValueError("pattern must have exactly one capture group")
    m = rx.search(str(path))
    if m is None:
        raise NoMatch(f"{pattern!r} does not match {str(path)!r}")
    return m.group(1)


class RegexLabeller:
    def __init__(self, pattern: str):
        self.pattern = pattern

    def __call__(self, path) -> str:
        return regex_label(self.pattern, path)


# splitting

def RandomSplitter(valid_pct: float = 0.2, seed: int | None = None) -> Callable:
    def _split(items):
        n = len(items)
        perm = np.random.default_rng(seed).permutation(n)
        n_valid = int(round(valid_pct * n))
        return [sorted(perm[n_valid:].tolist()), sorted(perm[:n_valid].tolist())]
    return _split


def IndexSplitter(valid_idx: Sequence[int]) -> Callable:
    def _split(items):
        valid = sorted(set(int(i) for i in valid_idx))
        vs = set(valid)
        return [[i for i in range(len(items)) if i not in vs], valid]
    return _split


def GrandparentSplitter(train_name: str = "train", valid_name: str = "valid") -> Callable:
    def _split(items):
        gp = [Path(o).parent.parent.name for o in items]
        return [[i for i, g in enumerate(gp) if g == train_name],
                [i for i, g in enumerate(gp) if g == valid_name]]
    return _split


def FuncSplitter(func: Callable) -> Callable:
    def _split(items):
        flags = [bool(func(o)) for o in items]
        return [[i for i, f in enumerate(flags) if not f], [i for i, f in enumerate(flags) if f]]
    return _split


# item sources

def get_csv_records(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "data.csv"
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def get_image_files(path, exts=(".pgm", ".ppm", ".npy"), folders: Sequence[str] | None = None) -> list[Path]:
    root = Path(path)
    dirs = [root / d for d in folders] if folders else [root]
    return sorted(p for d in dirs for p in d.rglob("*") if p.suffix.lower() in exts)


class _Getter(Transform):
    """Wraps a getter so that failures report the item index."""

    def __init__(self, fn: Callable):
        super().__init__(name=getattr(fn, "__name__", "getter"))
        self.fn = fn

    def encodes(self, x):
        return self.fn(x)


class _GetterPipeline(Pipeline):
    """Pipeline whose first transform is a getter; its failures become GetterError."""

    def _apply_one(self, t, x, split_idx, index=None):
        try:
            return super()._apply_one(t, x, split_idx, index)
        except TransformError as e:
            if t is self.transforms[0]:
                raise GetterError(index, e.cause) from e
            raise


class DataBlock:
    """Compile blocks, a splitter and getters into Datasets/DataLoaders.

    Whatever order the arguments are given in, execution is always
    items -> split -> label (getters) -> setup on the training split.
    """

    def __init__(self, blocks: Sequence[TransformBlock], n_inp: int | None = None,
                 get_items: Callable | None = None, splitter: Callable | None = None,
                 get_x: Callable | None = None, get_y: Callable | None = None,
                 getters: Sequence[Callable | None] | None = None,
                 item_tfms: Sequence | None = None, batch_tfms: Sequence | None = None):
        self.blocks = list(blocks)
        self.n_inp = n_inp if n_inp is not None else max(1, len(self.blocks) - 1)
        if not 1 <= self.n_inp < len(self.blocks):
            raise ValueError(f"n_inp={self.n_inp} invalid for {len(self.blocks)} blocks")
        self.get_items = get_items
        self.splitter = splitter or RandomSplitter(0.2, seed=None)
        if getters is not None:
            if len(getters) != len(self.blocks):
                raise ValueError("getters must have one entry per block")
            self.getters = list(getters)
        else:
            if len(self.blocks) != 2 and (get_x or get_y):
                self.getters = [get_x] + [get_y] * (len(self.blocks) - 1)
            else:
                self.getters = [get_x, get_y] + [None] * (len(self.blocks) - 2)
        self.item_tfms = list(item_tfms or [])
        self.batch_tfms = list(batch_tfms or [])

    def _pipelines(self) -> list[Pipeline]:
        out = []
        for block, getter in zip(self.blocks, self.getters):
            tfms = copy.deepcopy(block.type_tfms)
            if getter is not None:
                g = getter if isinstance(getter, Transform) else _Getter(getter)
                p = _GetterPipeline([g] + tfms)
            else:
                p = Pipeline(tfms)
            out.append(p)
        return out

    def datasets(self, source) -> Datasets:
        items = list(self.get_items(source)) if self.get_items else list(source)
        if len(items) < 2:
            raise EmptyItems(f"need at least 2 items, got {len(items)}")
        splits = self.splitter(items)
        if not splits or not splits[0]:
            raise EmptyTrainSplit("splitter produced an empty training split")
        return Datasets(items, self._pipelines(), splits=splits, n_inp=self.n_inp)

    def dataloaders(self, source, bs: int = 64, seed: int | None = None, num_workers: int = 0,
                    **kwargs) -> DataLoaders:
        dsets = self.datasets(source)
        item_tfms = [t for b in self.blocks for t in copy.deepcopy(b.item_tfms)] + copy.deepcopy(self.item_tfms)
        batch_tfms = [t for b in self.blocks for t in copy.deepcopy(b.batch_tfms)] + copy.deepcopy(self.batch_tfms)
        dls = DataLoaders.from_dsets(dsets, bs=bs, seed=seed, num_workers=num_workers,
                                     item_tfms=item_tfms, batch_tfms=batch_tfms, **kwargs)
        targets = self.blocks[self.n_inp:]
        dls.loss_name = targets[0].loss if len(targets) == 1 else None
        return dls


def build_datasets(block: DataBlock, source) -> Datasets:
    return block.datasets(source)


def build_dataloaders(block: DataBlock, source, batch_size: int = 64, seed: int | None = None,
                      **kwargs) -> DataLoaders:
    return block.dataloaders(source, bs=batch_size, seed=seed, **kwargs)
