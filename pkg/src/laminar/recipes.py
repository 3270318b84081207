"""End-to-end recipes over the built-in datasets, driven by a run config.

The command-line tool is a thin wrapper around these functions.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import tensor as T
from .augment import aug_transforms
from .data.block import (CategoryBlock, DataBlock, GrandparentSplitter, ImageBlock, RandomSplitter,
                         VectorBlock, get_csv_records, get_image_files, parent_label)
from .data.external import DatasetRegistry, default_registry
from .errors import ConfigError, UnknownDataset
from .learner import Learner
from .nn import Flatten, Sequential, mlp
from .optim import OPTIMIZERS
from .transforms import ColReader, Normalize

POINT_DATASETS = ("blobs2", "moons")
IMAGE_DATASETS = ("tinygrid",)


@dataclass
class RunConfig:
    dataset: str = "blobs2"
    model: list = field(default_factory=lambda: [2, 16, 2])
    optimizer: str = "adam"
    epochs: int = 5
    batch_size: int = 16
    lr_max: float = 5e-2
    pct_start: float = 0.25
    moms: list = field(default_factory=lambda: [0.95, 0.85, 0.95])
    wd: float = 0.0
    seed: int = 42
    metrics: list = field(default_factory=lambda: ["accuracy"])
    output_dir: str = "runs/out"

    def validate(self) -> "RunConfig":
        def bad(msg):
            raise ConfigError(f"config: {msg}")
        if not isinstance(self.dataset, str) or not self.dataset:
            bad("dataset must be a non-empty string")
        if (not isinstance(self.model, list) or len(self.model) < 2
                or not all(isinstance(n, int) and not isinstance(n, bool) and n > 0 for n in self.model)):
            bad("model must be a list of at least two positive layer sizes")
        if self.optimizer not in OPTIMIZERS:
            bad(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        for name in ("epochs", "batch_size", "seed"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name == "seed" else 1):
                bad(f"{name} must be a {'non-negative' if name == 'seed' else 'positive'} integer")
        if not _num(self.lr_max) or self.lr_max <= 0:
            bad("lr_max must be a positive number")
        if not _num(self.pct_start) or not 0 <= self.pct_start <= 1:
            bad("pct_start must be in [0, 1]")
        if not isinstance(self.moms, list) or len(self.moms) != 3 or not all(_num(m) for m in self.moms):
            bad("moms must be a list of three numbers")
        if not _num(self.wd) or self.wd < 0:
            bad("wd must be a non-negative number")
        if not isinstance(self.metrics, list) or not all(m in ("accuracy", "error_rate", "dice")
                                                        for m in self.metrics):
            bad("metrics must be a list drawn from accuracy, error_rate, dice")
        if not isinstance(self.output_dir, str):
            bad("output_dir must be a string")
        return self


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (unknown keys rejected), apply overrides, validate."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"config: cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**data).validate()


def dataloaders_for(cfg: RunConfig, registry: DatasetRegistry | None = None):
    registry = registry or default_registry()
    if cfg.dataset not in registry:
        raise UnknownDataset(cfg.dataset)
    path = registry.fetch(cfg.dataset)
    if cfg.dataset in POINT_DATASETS:
        block = DataBlock(blocks=[VectorBlock(2), CategoryBlock()], get_items=get_csv_records,
                          splitter=RandomSplitter(0.2, seed=cfg.seed),
                          getters=[ColReader(["x0", "x1"]), ColReader("label")],
                          batch_tfms=[Normalize()])
    else:
        block = DataBlock(blocks=[ImageBlock(), CategoryBlock()],
                          get_items=lambda p: get_image_files(p, folders=["train", "valid"]),
                          splitter=GrandparentSplitter(), get_y=parent_label,
                          batch_tfms=[Normalize(),
                                      aug_transforms(max_rotate=10.0, p_flip=0.5, seed=cfg.seed)])
    return block.dataloaders(path, bs=cfg.batch_size, seed=cfg.seed)


def model_for(cfg: RunConfig):
    net = mlp(cfg.model, rng=T.get_rng())
    return Sequential(Flatten(), *net._children) if cfg.dataset in IMAGE_DATASETS else net


def learner_for(cfg: RunConfig, registry: DatasetRegistry | None = None) -> Learner:
    T.set_seed(cfg.seed)
    dls = dataloaders_for(cfg, registry)
    return Learner(dls, model_for(cfg), opt_func=OPTIMIZERS[cfg.optimizer], lr=cfg.lr_max,
                   metrics=cfg.metrics, wd=cfg.wd)


def train(cfg: RunConfig, registry: DatasetRegistry | None = None) -> Learner:
    """fit_one_cycle per the config, then write recorder CSV, metrics and export."""
    learn = learner_for(cfg, registry)
    learn.fit_one_cycle(cfg.epochs, cfg.lr_max, pct_start=cfg.pct_start, moms=tuple(cfg.moms))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    learn.recorder.to_csv(out / "recorder.csv")
    learn.recorder.metrics_to_csv(out / "metrics.csv")
    (out / "metrics.txt").write_text(learn.recorder.metrics_table() + "\n")
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1) + "\n")
    learn.export(out / "model.zip")
    logging.getLogger("laminar").info("wrote %s", out)
    return learn
