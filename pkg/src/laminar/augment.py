"""Batched affine and lighting augmentation with a single interpolation pass.

Coordinates are normalized to [-1, 1] with align-corners-false semantics:
pixel column ``j`` of a width-``W`` image has its centre at
``x = (2j + 1) / W - 1``, so the image edges sit at exactly -1 and 1. An
affine matrix (2x3) maps output coordinates to the input coordinates that
are sampled. Composing matrices and sampling once avoids the blur of
repeated interpolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dispatch import Item, DispatchTable
from .errors import ShapeMismatch
from .tensor import Tensor
from .transforms import TRAIN, Transform, register_transform

SNAP = 1e-9


def identity() -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def rotate(deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0]])


def zoom(scale: float) -> np.ndarray:
    """scale > 1 zooms in (samples a smaller region of the input)."""
    if scale <= 0:
        raise ValueError("zoom scale must be positive")
    return np.array([[1 / scale, 0.0, 0.0], [0.0, 1 / scale, 0.0]])


def translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]])


def flip_lr() -> np.ndarray:
    return np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def _homog(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (2, 3):
        raise ShapeMismatch(f"affine matrix must be 2x3, got {m.shape}")
    return np.vstack([m, [0.0, 0.0, 1.0]])


def compose_affine(mats) -> np.ndarray:
    """Product of the 3x3 extensions, ``mats[0] @ mats[1] @ ...``."""
    mats = list(mats)
    if not mats:
        raise ValueError("compose_affine needs at least one matrix")
    out = _homog(mats[0])
    for m in mats[1:]:
        out = out @ _homog(m)
    return out[:2].copy()


def _centres(n: int) -> np.ndarray:
    return (2 * np.arange(n) + 1) / n - 1


def affine_grid(mats: np.ndarray, h: int, w: int) -> np.ndarray:
    """(b, 2, 3) matrices -> (b, h, w, 2) input coordinates (x, y)."""
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim == 2:
        mats = mats[None]
    ys, xs = np.meshgrid(_centres(h), _centres(w), indexing="ij")
    base = np.stack([xs, ys, np.ones_like(xs)], axis=-1)  # (h, w, 3)
    return np.einsum("hwk,bjk->bhwj", base, mats)


def _to_pixel(coord: np.ndarray, n: int) -> np.ndarray:
    p = ((coord + 1) * n - 1) / 2
    r = np.round(p)
    return np.where(np.abs(p - r) < SNAP, r, p)


def grid_sample(img, grid: np.ndarray, mode: str = "bilinear", padding: str = "zeros") -> np.ndarray:
    """Sample ``img`` (b, c, H, W) at ``grid`` (b, h, w, 2) normalized coordinates."""
    a = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if a.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"grid_sample: image {a.shape} vs grid {grid.shape}")
    if mode not in ("bilinear", "nearest") or padding not in ("zeros", "border"):
        raise ValueError(f"unsupported mode/padding {mode}/{padding}")
    b, c, H, W = a.shape
    px, py = _to_pixel(grid[..., 0], W), _to_pixel(grid[..., 1], H)
    if padding == "border":
        px, py = np.clip(px, 0, W - 1), np.clip(py, 0, H - 1)
    bidx = np.arange(b)[:, None, None]

    def gather(iy, ix):
        inside = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
        v = a[bidx, :, np.clip(iy, 0, H - 1), np.clip(ix, 0, W - 1)]  # (b, h, w, c)
        return np.where(inside[..., None], v, 0.0)

    if mode == "nearest":
        out = gather(np.floor(py + 0.5).astype(int), np.floor(px + 0.5).astype(int))
    else:
        x0, y0 = np.floor(px), np.floor(py)
        wx1, wy1 = px - x0, py - y0
        wx0, wy0 = 1 - wx1, 1 - wy1
        x0, y0 = x0.astype(int), y0.astype(int)
        out = (gather(y0, x0) * (wy0 * wx0)[..., None] + gather(y0, x0 + 1) * (wy0 * wx1)[..., None]
               + gather(y0 + 1, x0) * (wy1 * wx0)[..., None]
               + gather(y0 + 1, x0 + 1) * (wy1 * wx1)[..., None])
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def adjust_lighting(x: np.ndarray, brightness: np.ndarray, contrast: np.ndarray) -> np.ndarray:
    """Per sample: ``(x - mean) * contrast + mean + brightness``."""
    shape = (-1,) + (1,) * (x.ndim - 1)
    mean = x.reshape(len(x), -1).mean(axis=1).reshape(shape)
    return (x - mean) * np.reshape(contrast, shape) + mean + np.reshape(brightness, shape)


# per-type policy
affine_samplers = DispatchTable("affine_samplers")


@affine_samplers.register("ImageArray")
def _affine_image(x, _, mats, light):
    a = x.payload.data
    out = grid_sample(a, affine_grid(mats, a.shape[2], a.shape[3]), "bilinear", "zeros")
    if light is not None:
        out = adjust_lighting(out, *light)
    return Item("ImageArray", Tensor(out))


@affine_samplers.register("MaskArray")
def _affine_mask(x, _, mats, light):
    a = x.payload.data
    out = grid_sample(a[:, None], affine_grid(mats, a.shape[1], a.shape[2]), "nearest", "zeros")
    return Item("MaskArray", Tensor(out[:, 0]))


def _passthrough(x, _, mats, light):
    return x


for _t in ("Category", "Number", "ContinuousVector"):
    affine_samplers.register(_t, fn=_passthrough)


def apply_affine_batch(items, mats: np.ndarray, lighting=None):
    """Apply one composed matrix per sample to every element of a batch tuple.

    ``lighting`` is ``(brightness, contrast)`` arrays of length b, or None.
    Images are resampled bilinearly, masks by nearest neighbour with 0
    padding; targets pass through. Other semantic types raise NoMatch.
    """
    single = not isinstance(items, tuple)
    items = (items,) if single else items
    out = tuple(affine_samplers(x, None, mats, lighting) for x in items)
    return out[0] if single else out


@dataclass
class AugPolicy:
    max_rotate: float = 10.0         # degrees
    zoom_range: tuple = (1.0, 1.1)
    max_translate: float = 0.0       # normalized units
    p_flip: float = 0.5
    max_brightness: float = 0.0      # additive
    max_contrast: float = 0.0        # contrast in [1 - m, 1 + m]
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.zoom_range
        if self.max_rotate < 0 or not 0 < lo <= hi or self.max_translate < 0 \
                or not 0 <= self.p_flip <= 1 or self.max_brightness < 0 or not 0 <= self.max_contrast < 1:
            raise ValueError(f"invalid augmentation policy {self}")

    @property
    def neutral_geometry(self) -> bool:
        return (self.max_rotate == 0 and tuple(self.zoom_range) == (1.0, 1.0)
                and self.max_translate == 0 and self.p_flip == 0)

    @property
    def neutral_lighting(self) -> bool:
        return self.max_brightness == 0 and self.max_contrast == 0


def sample_params(policy: AugPolicy, n: int, rng: np.random.Generator):
    """Draw per-sample matrices (n, 2, 3) and lighting arrays from ``rng``."""
    rot = rng.uniform(-policy.max_rotate, policy.max_rotate, n)
    zm = rng.uniform(*policy.zoom_range, n)
    tx = rng.uniform(-policy.max_translate, policy.max_translate, n)
    ty = rng.uniform(-policy.max_translate, policy.max_translate, n)
    flip = rng.random(n) < policy.p_flip
    mats = np.stack([compose_affine([rotate(r), zoom(z), translate(a, b)] + ([flip_lr()] if f else []))
                     for r, z, a, b, f in zip(rot, zm, tx, ty, flip)])
    bright = rng.uniform(-policy.max_brightness, policy.max_brightness, n)
    contrast = rng.uniform(1 - policy.max_contrast, 1 + policy.max_contrast, n)
    return mats, (bright, contrast)


@register_transform
class AffineAugment(Transform):
    """Batch transform: random affine + lighting, training split only."""

    whole_tuple = True
    split_idx = TRAIN

    def __init__(self, policy: AugPolicy | None = None):
        super().__init__(split_idx=TRAIN, name="AffineAugment")
        self.policy = policy or AugPolicy()
        self.rng = np.random.default_rng(self.policy.seed)

    def encodes(self, b):
        items = b if isinstance(b, tuple) else (b,)
        n = len(items[0].payload)
        mats, light = sample_params(self.policy, n, self.rng)
        if self.policy.neutral_geometry and self.policy.neutral_lighting:
            return b
        light = None if self.policy.neutral_lighting else light
        return apply_affine_batch(b, mats, light)

    def get_state(self):
        p = self.policy
        return {"max_rotate": p.max_rotate, "zoom_range": list(p.zoom_range),
                "max_translate": p.max_translate, "p_flip": p.p_flip,
                "max_brightness": p.max_brightness, "max_contrast": p.max_contrast, "seed": p.seed}

    def set_state(self, state):
        state = dict(state)
        state["zoom_range"] = tuple(state.get("zoom_range", (1.0, 1.1)))
        self.policy = AugPolicy(**state)
        self.rng = np.random.default_rng(self.policy.seed)
        self.split_idx = TRAIN


def aug_transforms(policy: AugPolicy | None = None, **kwargs) -> AffineAugment:
    return AffineAugment(policy or AugPolicy(**kwargs))
