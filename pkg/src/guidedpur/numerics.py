"""Array helpers, the seeded random source, and the tensor file format.

Tensors are plain ``float64`` numpy arrays in C (row-major) order; the
canonical image layout is ``(H, W, C)`` and a batch adds a leading axis.

Tensor file format
------------------
A tensor named ``x`` is stored as two files:

``x.json``
    ``{"shape": [...], "dtype": "f64", "order": "row-major"}``
``x.bin``
    the flat data, IEEE-754 binary64, little-endian, row-major, no header.
    File size is exactly ``8 * prod(shape)`` bytes.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "RandomSource",
    "gaussian_like",
    "clamp01",
    "linf_distance",
    "as_tensor",
    "check_finite",
    "save_tensor",
    "load_tensor",
]


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}: need at least one axis, all extents >= 1")
    return shape


class RandomSource:
    """Seeded random stream.

    Uniform doubles come from PCG64 (numpy's ``PCG64`` bit generator seeded
    through ``SeedSequence(seed, spawn_key=stream)``); this is the single
    place the uniform algorithm is fixed. Standard normals are produced from
    that uniform stream with the Box-Muller transform, so a given seed yields
    a bit-identical normal stream.

    Sub-streams for parallel or per-item work are derived with
    :meth:`spawn`, which appends an index to the spawn key. Two sources with
    different keys are statistically independent.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"

    def spawn(self, *index: int) -> "RandomSource":
        return RandomSource(self.seed, self.stream + tuple(index))

    def uniform(self, shape: Sequence[int] | int) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        if isinstance(shape, int):
            shape = (shape,)
        return self._gen.random(_check_shape(shape))

    def normal(self, shape: Sequence[int] | int) -> np.ndarray:
        if isinstance(shape, int):
            shape = (shape,)
        shape = _check_shape(shape)
        n = math.prod(shape)
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1], keeps log finite
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def rademacher(self, shape: Sequence[int] | int) -> np.ndarray:
        return np.where(self.uniform(shape) < 0.5, -1.0, 1.0)

    def integers(self, low: int, high: int, size: int | None = None):
        """Integers on [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class ZeroNoise(RandomSource):
    """Random source whose Gaussian draws are all exactly zero.

    Test hook: forces every epsilon and every reverse-step noise to zero while
    leaving uniform draws (and therefore shuffles and target picks) intact.
    """

    def normal(self, shape):
        if isinstance(shape, int):
            shape = (shape,)
        return np.zeros(_check_shape(shape))

    def spawn(self, *index: int) -> "ZeroNoise":
        return ZeroNoise(self.seed, self.stream + tuple(index))


def gaussian_like(shape: Sequence[int], rng: RandomSource) -> np.ndarray:
    return rng.normal(shape)


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite entries")
    return x


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def linf_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def _tensor_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def save_tensor(path: str | Path, x: np.ndarray) -> Path:
    """Write ``x`` as ``<path>.json`` + ``<path>.bin``; returns the ``.bin`` path."""
    x = as_tensor(x)
    meta_path, bin_path = _tensor_paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"shape": list(x.shape), "dtype": "f64", "order": "row-major"}
    meta_path.write_text(json.dumps(meta))
    bin_path.write_bytes(x.astype("<f8").tobytes(order="C"))
    return bin_path


def load_tensor(path: str | Path) -> np.ndarray:
    meta_path, bin_path = _tensor_paths(path)
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != "f64" or meta.get("order") != "row-major":
        raise ShapeError(f"unsupported tensor encoding in {meta_path}: {meta}")
    shape = tuple(meta["shape"])
    raw = bin_path.read_bytes()
    n = math.prod(shape)
    if len(raw) != 8 * n:
        raise ShapeError(f"{bin_path}: expected {8 * n} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
