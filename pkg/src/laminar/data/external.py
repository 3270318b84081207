"""Dataset registry: seeded synthetic generators and checksummed remote archives.

Everything lands under a cache root (``$LAMINAR_CACHE``, else
``$XDG_CACHE_HOME/laminar``, else ``~/.cache/laminar``). A dataset directory
is complete once it holds a ``.complete`` marker; complete datasets are never
regenerated or downloaded again.
"""
from __future__ import annotations

import csv
import hashlib
import os
import shutil
import tarfile
import tempfile
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ChecksumMismatch, NetworkError, UnknownDataset
from .image import write_pgm

MARKER = ".complete"


def default_cache_root() -> Path:
    env = os.environ.get("LAMINAR_CACHE")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache"
    return Path(base) / "laminar"


@dataclass
class DatasetEntry:
    name: str
    kind: str  # "synthetic" | "remote"
    generator: Callable[[Path], None] | None = None
    url: str | None = None
    sha256: str | None = None
    archive: str = "zip"  # "zip" | "tar.gz"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _safe_extract(archive: Path, kind: str, dest: Path) -> None:
    dest_r = dest.resolve()
    if kind == "zip":
        with zipfile.ZipFile(archive) as z:
            for n in z.namelist():
                if not (dest / n).resolve().is_relative_to(dest_r):
                    raise ValueError(f"archive member escapes target: {n}")
            z.extractall(dest)
    else:
        with tarfile.open(archive, "r:*") as t:
            for m in t.getmembers():
                if not (dest / m.name).resolve().is_relative_to(dest_r):
                    raise ValueError(f"archive member escapes target: {m.name}")
            t.extractall(dest)


class DatasetRegistry:
    def __init__(self, cache_root=None):
        self.cache_root = Path(cache_root) if cache_root else default_cache_root()
        self.entries: dict[str, DatasetEntry] = {}

    def register(self, entry: DatasetEntry) -> None:
        self.entries[entry.name] = entry

    def __contains__(self, name):
        return name in self.entries

    def path(self, name: str) -> Path:
        return self.cache_root / name

    def fetch(self, name: str) -> Path:
        """Return the dataset directory, generating or downloading it on first use."""
        if name not in self.entries:
            raise UnknownDataset(name)
        entry = self.entries[name]
        target = self.path(name)
        if (target / MARKER).exists():
            return target
        self.cache_root.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{name}-", dir=self.cache_root))
        try:
            if entry.kind == "synthetic":
                entry.generator(tmp)
            else:
                _safe_extract(self._download(entry), entry.archive, tmp)
            (tmp / MARKER).write_text("")
            if target.exists():
                shutil.rmtree(target)
            tmp.rename(target)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp)
        return target

    def _download(self, entry: DatasetEntry) -> Path:
        arch_dir = self.cache_root / "archives"
        arch_dir.mkdir(parents=True, exist_ok=True)
        dest = arch_dir / f"{entry.name}.{entry.archive}"
        if not dest.exists():
            part = dest.with_suffix(dest.suffix + ".part")
            try:
                with urllib.request.urlopen(entry.url, timeout=60) as r, open(part, "wb") as f:
                    shutil.copyfileobj(r, f)
            except (urllib.error.URLError, OSError) as e:
                part.unlink(missing_ok=True)
                raise NetworkError(f"downloading {entry.url}: {e}") from e
            part.rename(dest)
        digest = sha256_file(dest)
        if digest != entry.sha256:
            raise ChecksumMismatch(f"{dest.name}: expected sha256 {entry.sha256}, got {digest}")
        return dest


# synthetic generators

def _write_points(dest: Path, x: np.ndarray, y: np.ndarray) -> None:
    with open(dest / "data.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x0", "x1", "label"])
        for (a, b), lbl in zip(x, y):
            w.writerow([repr(float(a)), repr(float(b)), str(int(lbl))])


def make_blobs2(dest: Path, n: int = 200, seed: int = 0) -> None:
    """Two unit-variance 2-D Gaussians whose centres are 4 sigma apart."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    centres = np.array([[-2.0, 0.0], [2.0, 0.0]])
    x = centres[y] + rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    _write_points(dest, x[perm], y[perm])


def make_moons(dest: Path, n: int = 400, noise: float = 0.1, seed: int = 0) -> None:
    """Two interleaved half circles."""
    rng = np.random.default_rng(seed)
    h = n // 2
    t_out = np.linspace(0, np.pi, h)
    t_in = np.linspace(0, np.pi, n - h)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], 1)
    inner = np.stack([1 - np.cos(t_in), 0.5 - np.sin(t_in)], 1)
    x = np.concatenate([outer, inner]) + rng.normal(0, noise, (n, 2))
    y = np.concatenate([np.zeros(h, int), np.ones(n - h, int)])
    perm = rng.permutation(n)
    _write_points(dest, x[perm], y[perm])


def make_tinygrid(dest: Path, n: int = 64, size: int = 8, seed: int = 0) -> None:
    """8x8 two-tone images of a rectangle, its mask, and a wide/tall label.

    Layout: ``{train,valid}/{wide,tall}/img_XXX.pgm`` plus
    ``masks/img_XXX.pgm`` (labels 0 background, 1 rectangle).
    """
    rng = np.random.default_rng(seed)
    (dest / "masks").mkdir()
    for k in range(n):
        split = "valid" if (k // 2) % 4 == 3 else "train"
        wide = k % 2 == 0
        hgt, wid = (int(rng.integers(2, 4)), int(rng.integers(5, 8))) if wide else \
                   (int(rng.integers(5, 8)), int(rng.integers(2, 4)))
        top = int(rng.integers(0, size - hgt + 1))
        left = int(rng.integers(0, size - wid + 1))
        mask = np.zeros((size, size), np.uint8)
        mask[top:top + hgt, left:left + wid] = 1
        bg, fg = int(rng.integers(20, 80)), int(rng.integers(170, 240))
        img = np.where(mask == 1, fg, bg)
        label = "wide" if wide else "tall"
        d = dest / split / label
        d.mkdir(parents=True, exist_ok=True)
        write_pgm(d / f"img_{k:03d}.pgm", img)
        write_pgm(dest / "masks" / f"img_{k:03d}.pgm", mask)


def default_registry(cache_root=None) -> DatasetRegistry:
    reg = DatasetRegistry(cache_root)
    reg.register(DatasetEntry("blobs2", "synthetic", generator=make_blobs2))
    reg.register(DatasetEntry("moons", "synthetic", generator=make_moons))
    reg.register(DatasetEntry("tinygrid", "synthetic", generator=make_tinygrid))
    return reg


def fetch_dataset(name: str, registry: DatasetRegistry | None = None) -> Path:
    return (registry or default_registry()).fetch(name)
