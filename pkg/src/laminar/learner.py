"""The training loop: a Learner dispatching two-way callback events."""
from __future__ import annotations

import json
import logging
import zipfile
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .callback import (EVENTS, Callback, CancelBatchException, CancelEpochException,
                       CancelFitException, CancelTrainException, CancelValidException, Recorder)
from .data.load import DataLoader, DataLoaders, collate
from .dispatch import Item
from .errors import ArchiveError, VersionMismatch
from .nn import Module, model_from_config, norm_params, state_tensors
from .optim import Adam, Optimizer
from .tensor import Tensor
from .transforms import VALID, Datasets, Pipeline

FORMAT_VERSION = 1
LOSSES: dict[str, Callable] = {"cross_entropy": T.cross_entropy, "mse": T.mse}

logger = logging.getLogger("laminar")


def _unwrap(x):
    if isinstance(x, Item):
        x = x.payload
    if isinstance(x, np.ndarray):
        x = Tensor(x)
    return x


class Learner:
    """Model + data + loss + optimizer factory + callbacks.

    During a batch the loop state lives in ``xb``, ``yb``, ``pred``, ``loss``
    (plus ``epoch``, ``iter``, ``training``); every callback may replace any of
    them from the event that precedes their use.
    """

    def __init__(self, dls, model: Module, loss_func: Callable | str | None = None,
                 opt_func: Callable[..., Optimizer] = Adam, lr: float = 1e-3,
                 splitter: Callable[[Module], list] | None = None, cbs: Sequence[Callback] = (),
                 metrics: Sequence = (), wd: float | None = None, n_inp: int | None = None):
        self.dls, self.model = dls, model
        if loss_func is None:
            loss_func = getattr(dls, "loss_name", None)
            if loss_func is None:
                raise ValueError("no loss_func given and the DataLoaders suggest none")
        if isinstance(loss_func, str):
            self.loss_name = loss_func
            loss_func = LOSSES[loss_func]
        else:
            self.loss_name = next((k for k, v in LOSSES.items() if v is loss_func), None)
        self.loss_func = loss_func
        self.opt_func, self.lr, self.wd = opt_func, lr, wd
        self.splitter = splitter
        self.n_inp = n_inp if n_inp is not None else getattr(dls, "n_inp", 1)
        self.opt: Optimizer | None = None
        self.logger = logger
        self.recorder = Recorder(metrics)
        self.cbs: list[Callback] = []
        self.add_cbs([self.recorder, *cbs])
        self.training = False
        self.epoch = self.iter = self.train_iter = 0
        self.n_epoch = 1
        self.xb: tuple = ()
        self.yb: tuple = ()
        self.pred = self.loss = None

    # callbacks
    def add_cb(self, cb: Callback) -> Callback:
        cb.learn = self
        self.cbs.append(cb)
        return cb

    def add_cbs(self, cbs) -> None:
        for cb in cbs:
            self.add_cb(cb)

    def remove_cb(self, cb: Callback) -> None:
        if cb in self.cbs:
            self.cbs.remove(cb)

    @contextmanager
    def added_cbs(self, cbs):
        cbs = list(cbs)
        self.add_cbs(cbs)
        try:
            yield
        finally:
            for cb in cbs:
                self.remove_cb(cb)

    def cb(self, event: str) -> None:
        """Fire ``event``: begin_* in list order, after_* in reverse."""
        if event not in EVENTS:
            raise ValueError(f"unknown event {event!r}")
        order = reversed(self.cbs) if event.startswith("after_") else self.cbs
        for c in list(order):
            f = getattr(c, event, None)
            if f is not None:
                f()

    @property
    def x(self):
        return self.xb[0] if self.xb else None

    @property
    def y(self):
        return self.yb[0] if self.yb else None

    # optimizer
    def param_groups(self) -> list[list[Tensor]]:
        return self.splitter(self.model) if self.splitter else [self.model.parameters()]

    def create_opt(self) -> Optimizer:
        self.opt = self.opt_func(self.param_groups(), lr=self.lr)
        if self.wd is not None:
            self.opt.set_hyper("wd", self.wd)
        return self.opt

    def freeze_to(self, k: int) -> None:
        """Freeze the first ``k`` parameter groups; BatchNorm affine params stay trainable."""
        if self.opt is None:
            self.create_opt()
        self.opt.freeze_to(k, norm_params(self.model))

    def freeze(self) -> None:
        self.freeze_to(-1)

    def unfreeze(self) -> None:
        self.freeze_to(0)

    # the loop
    def _split(self, b) -> None:
        b = tuple(b) if isinstance(b, (tuple, list)) else (b,)
        b = tuple(_unwrap(e) for e in b)
        self.xb, self.yb = b[:self.n_inp], b[self.n_inp:]

    def one_batch(self, i: int, b) -> None:
        self.iter = i
        self.pred = self.loss = None
        try:
            self._split(b);                                      self.cb("begin_batch")
            self.pred = self.model(*self.xb);                    self.cb("after_pred")
            if len(self.yb) == 0:
                return
            self.loss = self.loss_func(self.pred, *self.yb);     self.cb("after_loss")
            if not self.training:
                return
            self.loss.backward();                                self.cb("after_back")
            self.opt.step();                                     self.cb("after_step")
            self.opt.zero_grad()
        except CancelBatchException:
            self.cb("after_cancel")
        finally:
            self.cb("after_batch")

    def _with_events(self, f: Callable, name: str, exc: type) -> None:
        try:
            self.cb(f"begin_{name}")
            f()
        except exc:
            self.cb("after_cancel")
        finally:
            self.cb(f"after_{name}")

    def all_batches(self, dl) -> None:
        for i, b in enumerate(dl):
            self.one_batch(i, b)
            if self.training:
                self.train_iter += 1

    def _do_train(self) -> None:
        self.training = True
        self.model.train()
        self.dl = self.dls.train
        self.n_iter = len(self.dl) if hasattr(self.dl, "__len__") else None
        self._with_events(lambda: self.all_batches(self.dl), "train", CancelTrainException)

    def _do_validate(self, dl=None) -> None:
        self.training = False
        self.model.eval()
        self.dl = dl if dl is not None else self.dls.valid
        with T.no_grad():
            self._with_events(lambda: self.all_batches(self.dl), "validate", CancelValidException)

    def _do_epoch(self) -> None:
        self._do_train()
        self._do_validate()

    def _do_fit(self) -> None:
        for epoch in range(self.n_epoch):
            self.epoch = epoch
            self._with_events(self._do_epoch, "epoch", CancelEpochException)

    def fit(self, n_epoch: int, lr: float | None = None, wd: float | None = None,
            cbs: Sequence[Callback] = (), reset_opt: bool = False) -> None:
        if n_epoch < 1:
            raise ValueError("n_epoch must be at least 1")
        if self.opt is None or reset_opt:
            self.create_opt()
        if lr is not None:
            self.opt.set_hyper("lr", lr)
        if wd is not None:
            self.opt.set_hyper("wd", wd)
        self.n_epoch = n_epoch
        self.train_iter = 0
        n = len(self.dls.train) if hasattr(self.dls.train, "__len__") else None
        self.total_iters = n * n_epoch if n is not None else None
        with self.added_cbs(cbs):
            try:
                self._with_events(self._do_fit, "fit", CancelFitException)
            finally:
                self.model.eval()
                self.training = False

    def validate(self, dl=None) -> list:
        """One validation pass; returns [valid_loss, *metric values]."""
        self._do_validate(dl)
        rec = self.recorder
        return [rec._valid_loss.value] + [m.value for m in rec.metrics]

    # schedules (implemented in schedule.py)
    def fit_one_cycle(self, n_epoch: int, lr_max=None, **kwargs) -> None:
        from .schedule import fit_one_cycle
        fit_one_cycle(self, n_epoch, lr_max, **kwargs)

    def lr_find(self, **kwargs):
        from .schedule import lr_find
        return lr_find(self, **kwargs)

    # inference
    def get_preds(self, dl=None) -> tuple[Tensor, Tensor | None]:
        """Predictions and targets over ``dl`` (default: validation), in loader order."""
        dl = dl if dl is not None else self.dls.valid
        self.model.eval()
        preds, targs = [], []
        with T.no_grad():
            for b in dl:
                self._split(b)
                preds.append(self.model(*self.xb).data)
                if self.yb:
                    targs.append(self.yb[0].data)
        p = Tensor(np.concatenate(preds))
        return p, (Tensor(np.concatenate(targs)) if targs else None)

    def _inference_parts(self):
        dl = self.dls.valid
        ds = getattr(dl, "dataset", None)
        parent = getattr(ds, "parent", None)
        if not isinstance(parent, Datasets):
            raise TypeError("predict needs DataLoaders built from a Datasets")
        return dl, parent.pipelines

    def predict(self, item):
        """Run one raw item through the input pipelines and the model.

        Returns (decoded prediction, probabilities or None, raw model output).
        """
        dl, pipes = self._inference_parts()
        inputs = tuple(p(item, split_idx=VALID) for p in pipes[:self.n_inp])
        inputs = dl.item_tfms(inputs, split_idx=VALID)
        batch = dl.batch_tfms(collate([inputs]), split_idx=VALID)
        xb = tuple(_unwrap(e) for e in batch)
        self.model.eval()
        with T.no_grad():
            out = self.model(*xb)
        raw = Tensor(out.data[0])
        target_pipe = pipes[self.n_inp] if len(pipes) > self.n_inp else Pipeline()
        if self.loss_name == "cross_entropy":
            probs = T.softmax(Tensor(out.data)).data[0]
            decoded = target_pipe.decode(Item("Category", int(probs.argmax())))
            return decoded.payload, Tensor(probs), raw
        decoded = target_pipe.decode(Item("ContinuousVector", raw))
        return getattr(decoded, "payload", decoded), None, raw

    # export
    def export(self, path) -> None:
        """Write a zip with ``manifest.json`` (topology, transform state) and
        ``weights.bin`` (little-endian f64 state tensors). No data items."""
        dl, pipes = self._inference_parts()
        state = state_tensors(self.model)
        manifest = {
            "format_version": FORMAT_VERSION,
            "model": self.model.config(),
            "state": [{"name": n, "shape": list(t.shape)} for n, t in state],
            "loss": self.loss_name,
            "n_inp": self.n_inp,
            "pipelines": [p.to_manifest() for p in pipes[:self.n_inp]]
                         + [_target_manifest(p) for p in pipes[self.n_inp:]],
            "item_tfms": dl.item_tfms.to_manifest(),
            "batch_tfms": dl.batch_tfms.to_manifest(),
            "hypers": self.opt.hypers if self.opt is not None else None,
        }
        blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in state)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as z:
            z.writestr("manifest.json", json.dumps(manifest, indent=1))
            z.writestr("weights.bin", blob)


def _target_manifest(p: Pipeline) -> list:
    # target getters (labelling functions) are not needed to decode predictions
    return [t.to_manifest() for t in p.transforms if t.exportable or t.has_decodes]


def read_manifest(path) -> dict:
    try:
        with zipfile.ZipFile(path) as z:
            return json.loads(z.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as e:
        raise ArchiveError(f"{path}: unreadable archive ({e})") from e


def load_learner(path) -> Learner:
    """Rebuild an inference-ready Learner from an ``export`` archive."""
    try:
        with zipfile.ZipFile(path) as z:
            manifest = json.loads(z.read("manifest.json"))
            blob = z.read("weights.bin")
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as e:
        raise ArchiveError(f"{path}: unreadable archive ({e})") from e
    version = manifest.get("format_version")
    if not isinstance(version, int):
        raise ArchiveError(f"{path}: manifest has no format_version")
    if version > FORMAT_VERSION:
        raise VersionMismatch(f"archive format {version} is newer than supported {FORMAT_VERSION}")
    try:
        model = model_from_config(manifest["model"])
        state = state_tensors(model)
        shapes = [tuple(s["shape"]) for s in manifest["state"]]
        if [tuple(t.shape) for _, t in state] != shapes:
            raise ArchiveError("weight shapes do not match the model topology")
        flat = np.frombuffer(blob, dtype="<f8")
        if flat.size != sum(int(np.prod(s)) for s in shapes):
            raise ArchiveError("weights.bin has the wrong length")
        pos = 0
        for (_, t), s in zip(state, shapes):
            k = int(np.prod(s))
            t.data = flat[pos:pos + k].astype(np.float64).reshape(s)
            pos += k
        pipes = [Pipeline.from_manifest(p) for p in manifest["pipelines"]]
        item_p = Pipeline.from_manifest(manifest["item_tfms"], tuples=True)
        batch_p = Pipeline.from_manifest(manifest["batch_tfms"], tuples=True)
    except (KeyError, TypeError, ValueError) as e:
        raise ArchiveError(f"{path}: malformed manifest ({e})") from e
    n_inp = manifest["n_inp"]
    dsets = Datasets([], pipes, splits=[[], []], n_inp=n_inp, do_setup=False)
    common = dict(item_tfms=item_p, batch_tfms=batch_p, seed=0)
    dls = DataLoaders(DataLoader(dsets.train, **common), DataLoader(dsets.valid, **common))
    dls.n_inp = n_inp
    learn = Learner(dls, model, loss_func=manifest["loss"], n_inp=n_inp)
    model.eval()
    return learn
