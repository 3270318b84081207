"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only.

Raw ``.npy`` arrays are also accepted and taken as already scaled.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..dispatch import Item, payload
from ..tensor import Tensor
from ..transforms import Transform, register_transform


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    toks, pos = [], 0
    while len(toks) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        toks.append(buf[start:pos])
    return toks, pos + 1


def read_pnm(path) -> np.ndarray:
    """Return (H, W) for P5 or (H, W, 3) for P6 as uint8."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic not in (b"P5", b"P6") or int(maxval) > 255:
        raise ValueError(f"{path}: only 8-bit binary PGM/PPM is supported")
    w, h = int(w), int(h)
    ch = 1 if magic == b"P5" else 3
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * ch, offset=pos)
    return data.reshape((h, w) if ch == 1 else (h, w, 3))


def write_pgm(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    a = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = a.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + a.tobytes())


@register_transform
class LoadImage(Transform):
    """Path -> ImageArray item of shape (channels, H, W) scaled to [0, 1]."""

    def encodes(self, path):
        p = Path(payload(path))
        if p.suffix.lower() == ".npy":
            a = np.load(p, allow_pickle=False).astype(np.float64)
            return Item("ImageArray", Tensor(a[None] if a.ndim == 2 else a))
        a = read_pnm(p).astype(np.float64) / 255.0
        a = a[None] if a.ndim == 2 else a.transpose(2, 0, 1)
        return Item("ImageArray", Tensor(a))


@register_transform
class LoadMask(Transform):
    """Path -> MaskArray item of shape (H, W) holding integer labels."""

    def encodes(self, path):
        p = Path(payload(path))
        a = np.load(p, allow_pickle=False) if p.suffix.lower() == ".npy" else read_pnm(p)
        return Item("MaskArray", Tensor(a.astype(np.float64)))
