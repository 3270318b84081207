"""show_batch: decode one batch and render it by (input, target) semantic types."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from ..dispatch import DispatchTable, payload
from ..tensor import Tensor
from .image import write_pgm

show_batch_renderers = DispatchTable("show_batch")


def _arr(x) -> np.ndarray:
    v = payload(x)
    return v.data if isinstance(v, Tensor) else np.asarray(v)


@show_batch_renderers.register("ContinuousVector", "Category")
def show_vector_category(xs, ys, out, out_dir):
    rows = [[" ".join(f"{v:.4f}" for v in _arr(x).reshape(-1)), str(payload(y))]
            for x, y in zip(xs, ys)]
    header = ["x", "label"]
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(2)]
    for r in [header] + rows:
        out.write("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n")


def _to_pgm(img: np.ndarray) -> np.ndarray:
    img = img[0] if img.ndim == 3 else img
    return img * 255.0


@show_batch_renderers.register("ImageArray", "Category")
def show_image_category(xs, ys, out, out_dir):
    out_dir = Path(out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (x, y) in enumerate(zip(xs, ys)):
        f = out_dir / f"item_{k:03d}.pgm"
        write_pgm(f, _to_pgm(_arr(x)))
        out.write(f"{f.name}: {payload(y)}\n")


@show_batch_renderers.register("ImageArray", "MaskArray")
def show_image_mask(xs, ys, out, out_dir):
    out_dir = Path(out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (x, y) in enumerate(zip(xs, ys)):
        img, mask = out_dir / f"item_{k:03d}.pgm", out_dir / f"item_{k:03d}_mask.pgm"
        write_pgm(img, _to_pgm(_arr(x)))
        m = _arr(y)
        write_pgm(mask, m)
        labels = ",".join(str(int(v)) for v in np.unique(m))
        out.write(f"{img.name} + {mask.name}: mask labels {{{labels}}}\n")


def show_batch(dls, max_n: int = 9, out=None, out_dir=None, renderers=show_batch_renderers):
    """Decode up to ``max_n`` samples of one validation batch and render them."""
    if max_n <= 0:
        return
    out = out or sys.stdout
    dl = dls.valid if len(dls.valid.dataset) else dls.train
    rows = dl.decode_batch(dl.one_batch(), max_n=max_n)
    n_inp = dls.n_inp
    xs = [r[0] for r in rows]
    ys = [r[n_inp] for r in rows]
    render = renderers.dispatch(xs[0], ys[0])
    render(xs, ys, out, out_dir)
