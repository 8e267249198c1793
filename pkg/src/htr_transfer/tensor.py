"""Dense tensor helpers and seeded random streams.

Tensors are plain row-major ``numpy.ndarray`` values. The functions here add
the shape checks the rest of the package relies on: no broadcasting, no
silent extent coercion.
"""
from __future__ import annotations

import zlib
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor extents are invalid or incompatible."""


def resolve_dtype(precision: str | int | np.dtype | None) -> np.dtype:
    if precision is None:
        return np.dtype(DEFAULT_DTYPE)
    if precision in ("float64", "f64", 64, "64"):
        return np.dtype(np.float64)
    if precision in ("float32", "f32", 32, "32"):
        return np.dtype(np.float32)
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {precision!r}")
    return dt


def tensor_create(shape: Sequence[int], fill=0.0, dtype=None) -> np.ndarray:
    """Allocate a tensor of ``shape``.

    ``fill`` is either a scalar or a ``numpy.random.Generator``; a generator
    fills the tensor with uniform draws from [0, 1).
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    dt = resolve_dtype(dtype)
    if isinstance(fill, np.random.Generator):
        return fill.random(shape).astype(dt, copy=False)
    return np.full(shape, fill, dtype=dt)


def flat_index(index: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major offset: sum_k index[k] * prod(shape[k+1:])."""
    if len(index) != len(shape):
        raise ShapeError("index rank does not match shape rank")
    offset = 0
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of bounds for {tuple(shape)}")
        offset = offset * n + i
    return offset


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def elementwise_apply(t: np.ndarray, f: Callable, other: np.ndarray | None = None) -> np.ndarray:
    """Apply ``f`` per element. Binary form requires identical shapes."""
    if other is None:
        return np.asarray(f(t))
    if t.shape != other.shape:
        raise ShapeError(f"shape mismatch: {t.shape} vs {other.shape}")
    return np.asarray(f(t, other))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError("softmax_rows expects a rank-2 tensor")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def make_rng(seed: int, consumer: str) -> np.random.Generator:
    """Independent generator for one consumer of a run seeded with ``seed``.

    The stream key is a hash of the consumer name, so adding a consumer never
    shifts the draws of the existing ones.
    """
    key = zlib.crc32(consumer.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
