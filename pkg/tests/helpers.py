"""Small builders shared by the learner, schedule and acceptance tests."""
from __future__ import annotations

import numpy as np

from laminar import tensor as T
from laminar.callback import EVENTS, Callback
from laminar.data.block import CategoryBlock, DataBlock, RandomSplitter, VectorBlock, get_csv_records
from laminar.data.external import fetch_dataset
from laminar.data.load import DataLoader, DataLoaders
from laminar.tensor import Tensor
from laminar.transforms import ColReader, Normalize


def toy_samples(n, seed=0, dim=2):
    """Linearly separable (x, label) pairs as plain tensors and ints."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, dim)) + np.where(y[:, None] == 1, 1.5, -1.5)
    return [(Tensor(x[i]), int(y[i])) for i in range(n)]


def raw_loaders(n_train=8, n_valid=4, bs=4, seed=0):
    train = DataLoader(toy_samples(n_train, seed), bs=bs, shuffle=True, drop_last=True, seed=seed)
    valid = DataLoader(toy_samples(n_valid, seed + 1), bs=bs, seed=seed)
    return DataLoaders(train, valid)


def raw_blobs_loaders(bs=16, seed=42):
    """blobs2 as two plain loaders over (Tensor, int) samples; no data blocks."""
    recs = get_csv_records(fetch_dataset("blobs2"))
    samples = [(Tensor([float(r["x0"]), float(r["x1"])]), int(r["label"])) for r in recs]
    perm = np.random.default_rng(seed).permutation(len(samples))
    valid = [samples[i] for i in perm[:40]]
    train = [samples[i] for i in perm[40:]]
    return DataLoaders(DataLoader(train, bs=bs, shuffle=True, drop_last=True, seed=seed),
                       DataLoader(valid, bs=bs, seed=seed))


def blobs_dls(bs=16, seed=42):
    block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()], get_items=get_csv_records,
                      splitter=RandomSplitter(0.2, seed=seed),
                      getters=[ColReader(["x0", "x1"]), ColReader("label")],
                      batch_tfms=[Normalize()])
    return block.dataloaders(fetch_dataset("blobs2"), bs=bs, seed=seed)


def moons_dls(bs=16, seed=42):
    block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()], get_items=get_csv_records,
                      splitter=RandomSplitter(0.2, seed=seed),
                      getters=[ColReader(["x0", "x1"]), ColReader("label")],
                      batch_tfms=[Normalize()])
    return block.dataloaders(fetch_dataset("moons"), bs=bs, seed=seed)


class Tracer(Callback):
    """Records every event; optionally raises ``exc`` at the ``nth`` firing of ``event``."""

    def __init__(self, exc=None, event=None, nth=0, training=None):
        self.events: list[str] = []
        self.exc, self.event, self.nth, self.training = exc, event, nth, training
        self.seen = 0

    def _fire(self, name):
        self.events.append(name)
        if self.exc is None or name != self.event:
            return
        if self.training is not None and self.learn.training != self.training:
            return
        self.seen += 1
        if self.seen == self.nth + 1:
            raise self.exc()


for _e in EVENTS:
    setattr(Tracer, _e, lambda self, _n=_e: self._fire(_n))


TRAIN_BATCH = ["begin_batch", "after_pred", "after_loss", "after_back", "after_step", "after_batch"]
VALID_BATCH = ["begin_batch", "after_pred", "after_loss", "after_batch"]
