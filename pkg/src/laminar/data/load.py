"""Batch assembly with overridable hooks, and the train/valid loader pair.

The hook chain, in call order::

    before_iter
    get_idxs -> shuffle_fn -> chunkify            (sample creation)
    per chunk:
        sample_filter(i) for each index
        create_item -> after_item -> retain_item  (item creation, per index)
        before_batch -> create_batch -> after_batch_tfms -> retain_batch
        -> to_device                              (batch creation)
    after_iter

``decode_hook`` is the fifteenth hook; ``decode_batch`` calls it to undo the
batch-level transforms. Every hook is a method; override it in a subclass or
pass a plain function of the same arguments (minus ``self``) as a keyword to
the constructor.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Iterator, Sequence

import numpy as np

from ..dispatch import Item, retain_type
from ..errors import CollateError, EmptySource
from ..tensor import Tensor
from ..transforms import TRAIN, Pipeline

HOOKS = (
    "before_iter", "get_idxs", "shuffle_fn", "chunkify", "sample_filter",
    "create_item", "after_item", "retain_item", "before_batch", "create_batch",
    "after_batch_tfms", "retain_batch", "to_device", "decode_hook", "after_iter",
)


def shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    """PCG64 stream keyed on (seed, epoch) through numpy's SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))


def _collate_values(vals: list):
    first = vals[0]
    if isinstance(first, (Tensor, np.ndarray)):
        arrs = [v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64) for v in vals]
        shapes = {a.shape for a in arrs}
        if len(shapes) > 1:
            raise CollateError(f"cannot stack items of shapes {sorted(shapes)}")
        return Tensor(np.stack(arrs))
    if isinstance(first, (int, float, np.integer, np.floating)) and not isinstance(first, bool):
        return Tensor(np.array(vals, dtype=np.float64))
    return list(vals)


def collate(items: list):
    """Stack a list of samples along a new leading axis, keeping semantic tags."""
    first = items[0]
    if isinstance(first, tuple):
        if any(len(it) != len(first) for it in items):
            raise CollateError("samples have different tuple lengths")
        return tuple(collate([it[k] for it in items]) for k in range(len(first)))
    if isinstance(first, Item):
        if any(not isinstance(it, Item) or it.semantic != first.semantic for it in items):
            raise CollateError("samples mix semantic types in one slot")
        return Item(first.semantic, _collate_values([it.payload for it in items]))
    return _collate_values(items)


def _row(x, k: int):
    if isinstance(x, tuple):
        return tuple(_row(e, k) for e in x)
    if isinstance(x, Item):
        return Item(x.semantic, _row(x.payload, k))
    if isinstance(x, Tensor):
        return Tensor(x.data[k])
    return x[k]


def batch_len(b) -> int:
    if isinstance(b, tuple):
        return batch_len(b[0])
    if isinstance(b, Item):
        return batch_len(b.payload)
    return len(b)


class DataLoader:
    """Iterates a dataset in batches.

    ``dataset`` is anything indexable with a length: a Datasets subset, or a
    plain list of (x, y) samples. ``item_tfms`` and ``batch_tfms`` are
    tuple-mode pipelines run by the ``after_item`` and ``after_batch_tfms``
    hooks. With ``num_workers > 0``, item creation runs on a thread pool and
    results are put back in index order.
    """

    def __init__(self, dataset, bs: int = 64, shuffle: bool = False, drop_last: bool = False,
                 seed: int | None = None, num_workers: int = 0, item_tfms=None,
                 batch_tfms=None, device: str = "cpu", **hooks):
        if bs < 1:
            raise ValueError("bs must be at least 1")
        self.dataset = dataset
        self.bs, self.shuffle, self.drop_last = bs, shuffle, drop_last
        self.seed = seed if seed is not None else int.from_bytes(os.urandom(4), "little")
        self.num_workers = num_workers
        self.device = device
        self.item_tfms = item_tfms if isinstance(item_tfms, Pipeline) else Pipeline(item_tfms or [], tuples=True)
        self.batch_tfms = batch_tfms if isinstance(batch_tfms, Pipeline) else Pipeline(batch_tfms or [], tuples=True)
        self.epoch = 0
        for name, fn in hooks.items():
            if name not in HOOKS:
                raise TypeError(f"unknown DataLoader hook {name!r}")
            setattr(self, name, fn)

    @property
    def split_idx(self):
        return getattr(self.dataset, "split_idx", None)

    @property
    def n(self) -> int:
        return len(self.dataset)

    def __len__(self):
        full, rem = divmod(self.n, self.bs)
        return full if self.drop_last or rem == 0 else full + 1

    # hooks (defaults)
    def before_iter(self):
        pass

    def get_idxs(self) -> list[int]:
        return list(range(self.n))

    def shuffle_fn(self, idxs: list[int]) -> list[int]:
        perm = shuffle_rng(self.seed, self._epoch).permutation(len(idxs))
        return [idxs[i] for i in perm]

    def chunkify(self, idxs: list[int]) -> Iterator[list[int]]:
        for start in range(0, len(idxs), self.bs):
            chunk = idxs[start:start + self.bs]
            if self.drop_last and len(chunk) < self.bs:
                return
            yield chunk

    def sample_filter(self, i: int) -> bool:
        return True

    def create_item(self, i: int):
        return self.dataset[i]

    def after_item(self, item):
        return self.item_tfms(item, split_idx=self.split_idx)

    def retain_item(self, new, old):
        if isinstance(new, tuple) and isinstance(old, tuple) and len(new) == len(old):
            return tuple(retain_type(n, o) for n, o in zip(new, old))
        return new

    def before_batch(self, items: list) -> list:
        return items

    def create_batch(self, items: list):
        return collate(items)

    def after_batch_tfms(self, batch):
        return self.batch_tfms(batch, split_idx=self.split_idx)

    def retain_batch(self, new, old):
        return self.retain_item(new, old)

    def to_device(self, batch):
        return batch

    def decode_hook(self, batch):
        return self.batch_tfms.decode(batch)

    def after_iter(self):
        pass

    # driving
    def _make_item(self, i: int):
        item = self.create_item(i)
        return self.retain_item(self.after_item(item), item)

    def iterate(self, epoch: int | None = None) -> Iterator[Any]:
        if self.n == 0:
            raise EmptySource("DataLoader source is empty")
        self._epoch = self.epoch if epoch is None else epoch
        if epoch is None:
            self.epoch += 1
        pool = ThreadPoolExecutor(self.num_workers) if self.num_workers > 0 else None
        try:
            self.before_iter()
            idxs = self.get_idxs()
            if self.shuffle:
                idxs = self.shuffle_fn(idxs)
            for chunk in self.chunkify(idxs):
                chunk = [i for i in chunk if self.sample_filter(i)]
                if not chunk:
                    continue
                items = list(pool.map(self._make_item, chunk)) if pool else [self._make_item(i) for i in chunk]
                items = self.before_batch(items)
                b = self.create_batch(items)
                b = self.retain_batch(self.after_batch_tfms(b), b)
                yield self.to_device(b)
            self.after_iter()
        finally:
            if pool:
                pool.shutdown()

    def __iter__(self):
        return self.iterate()

    def one_batch(self):
        return next(self.iterate(epoch=0))

    def decode_batch(self, batch, max_n: int | None = None) -> list[tuple]:
        """Split a batch into rows and undo batch, item and dataset transforms."""
        if batch_len(batch) == 0:
            return []
        b = self.decode_hook(batch)
        n = batch_len(b) if max_n is None else min(max_n, batch_len(b))
        out = []
        decode = getattr(self.dataset, "decode", None)
        for k in range(n):
            row = self.item_tfms.decode(_row(b, k))
            out.append(decode(row) if decode else row)
        return out


class DataLoaders:
    """A training loader (shuffled, drops the last partial batch) and a validation one."""

    def __init__(self, train, valid, device: str = "cpu"):
        self.train, self.valid, self.device = train, valid, device
        self.n_inp = getattr(getattr(train, "dataset", None), "n_inp", 1)
        self.loss_name: str | None = None

    @property
    def loaders(self):
        return [self.train, self.valid]

    def __getitem__(self, i):
        return self.loaders[i]

    @classmethod
    def from_dsets(cls, dsets, bs: int = 64, seed: int | None = None, num_workers: int = 0,
                   item_tfms=None, batch_tfms=None, shuffle_train: bool = True,
                   drop_last: bool = True, valid_bs: int | None = None) -> "DataLoaders":
        item_p = Pipeline(item_tfms or [], tuples=True)
        batch_p = Pipeline(batch_tfms or [], tuples=True)
        train_ds, valid_ds = dsets.train, dsets.valid
        if any(t.has_setups for t in batch_p.transforms) and len(train_ds):
            sample = [item_p(train_ds[i], split_idx=TRAIN) for i in range(len(train_ds))]
            batch_p.setup(sample, TRAIN)
        common = dict(seed=seed, num_workers=num_workers, item_tfms=item_p, batch_tfms=batch_p)
        train = DataLoader(train_ds, bs, shuffle=shuffle_train, drop_last=drop_last, **common)
        valid = DataLoader(valid_ds, valid_bs or bs, shuffle=False, drop_last=False, **common)
        dls = cls(train, valid)
        dls.n_inp = dsets.n_inp
        return dls

    def show_batch(self, max_n: int = 9, out=None, out_dir=None):
        from .show import show_batch
        return show_batch(self, max_n=max_n, out=out, out_dir=out_dir)


def split_batch(b: Sequence, n_inp: int) -> tuple[tuple, tuple]:
    """((inputs...), (targets...)) view of a flat batch tuple."""
    b = tuple(b)
    return b[:n_inp], b[n_inp:]
