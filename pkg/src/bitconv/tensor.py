"""Dense float32 tensors in N,C,H,W row-major layout.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 and rank 1-4.
Lower ranks are read as suffixes of N,C,H,W (a rank-3 tensor is C,H,W).
The helpers here enforce the shape rules the rest of the engine relies on.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import IndexOutOfRange, ShapeError

DTYPE = np.float32
MAX_RANK = 4


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got shape {shape}")
    return shape


def tensor_new(shape: Sequence[int], fill: float = 0.0) -> np.ndarray:
    return np.full(check_shape(shape), fill, dtype=DTYPE)


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a contiguous float32 array, validating its shape."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    check_shape(arr.shape)
    return arr


def nchw(shape: Sequence[int]) -> tuple[int, int, int, int]:
    """Pad a rank<=4 shape with leading 1s to a full N,C,H,W tuple."""
    shape = tuple(shape)
    return (1,) * (MAX_RANK - len(shape)) + shape


def channel_concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Stack tensors along the channel axis.

    All parts must agree on N, H and W. Part ``i`` occupies the channel
    block directly after parts ``0..i-1``.
    """
    if not parts:
        raise ValueError("channel_concat needs at least one part")
    full = [nchw(p.shape) for p in parts]
    n, _, h, w = full[0]
    for shape in full[1:]:
        if (shape[0], shape[2], shape[3]) != (n, h, w):
            raise ShapeError(f"cannot concat {full[0]} with {shape}: N/H/W differ")
    rank = max(p.ndim for p in parts)
    rank = max(rank, 3)
    stacked = np.concatenate(
        [np.asarray(p, dtype=DTYPE).reshape(s) for p, s in zip(parts, full)], axis=1
    )
    return stacked.reshape(stacked.shape[MAX_RANK - rank:]) if rank < MAX_RANK else stacked


def _offset(shape: tuple[int, ...], index: Sequence[int]) -> tuple[int, ...]:
    index = tuple(int(i) for i in index)
    if len(index) != len(shape):
        raise IndexOutOfRange(f"index {index} has wrong rank for shape {shape}")
    for i, extent in zip(index, shape):
        if not 0 <= i < extent:
            raise IndexOutOfRange(f"index {index} out of range for shape {shape}")
    return index


def tensor_get(t: np.ndarray, index: Sequence[int]) -> float:
    return float(t[_offset(t.shape, index)])


def tensor_set(t: np.ndarray, index: Sequence[int], value: float) -> None:
    t[_offset(t.shape, index)] = value
