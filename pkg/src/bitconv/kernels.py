"""Full-precision reference kernels.

These are the float inference path and the oracle the binary kernels are
checked against. Convolution is im2col followed by a single gemm.
Batched variants (leading N axis) exist for the trainer; the inference
path runs one image at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError
from .tensor import DTYPE, nchw


def out_size(size: int, k: int, stride: int, pad: int) -> int:
    """Floor-mode output extent; raises when the window does not fit."""
    if k < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"bad window k={k} stride={stride} pad={pad}")
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"window {k} larger than padded input {size + 2 * pad}")
    return span // stride + 1


@dataclass
class ConvParams:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.weights is None:
            self.weights = np.zeros(shape, dtype=DTYPE)
        self.weights = np.asarray(self.weights, dtype=DTYPE).reshape(shape)
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(self.out_channels)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (out_size(h, self.kernel, self.stride, self.pad),
                out_size(w, self.kernel, self.stride, self.pad))

    @property
    def weight_matrix(self) -> np.ndarray:
        return self.weights.reshape(self.out_channels, -1)


def im2col_batch(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """[N,C,H,W] -> [N, C*k*k, Ho*Wo] with zero padding."""
    n, c, h, w = x.shape
    ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: N, C, Ho, Wo, k, k
    cols = win[:, :, :ho, :wo].transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols.reshape(n, c * k * k, ho * wo), dtype=DTYPE)


def im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Receptive fields of a single image as matrix columns.

    Rows run channel-major, then kernel row, then kernel column; column
    ``j`` is output position ``j`` in row-major order.
    """
    n, c, h, w = nchw(x.shape)
    if n != 1:
        raise ShapeError(f"im2col takes a single image, got N={n}")
    return im2col_batch(np.asarray(x, dtype=DTYPE).reshape(1, c, h, w), k, stride, pad)[0]


def col2im_batch(cols: np.ndarray, shape: tuple[int, int, int, int], k: int,
                 stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of :func:`im2col_batch`: scatter-add columns back to an image."""
    n, c, h, w = shape
    ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm shapes {a.shape} x {b.shape} do not agree")
    return np.matmul(a, b)


def conv_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Convolution of each image in ``x`` -> [N, out_channels, Ho, Wo]."""
    n, c, h, w = nchw(x.shape)
    if c != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} channels, got {c}")
    ho, wo = p.output_hw(h, w)
    x = np.asarray(x, dtype=DTYPE).reshape(n, c, h, w)
    wmat = p.weight_matrix
    out = np.empty((n, p.out_channels, ho, wo), dtype=DTYPE)
    for i in range(n):
        cols = im2col(x[i:i + 1], p.kernel, p.stride, p.pad)
        out[i] = (gemm(wmat, cols) + p.bias[:, None]).reshape(p.out_channels, ho, wo)
    return out


def maxpool(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Max over k*k windows; stride == k gives non-overlapping windows."""
    shape = x.shape
    n, c, h, w = nchw(shape)
    if k > h or k > w:
        raise ShapeError(f"pool window {k} exceeds input {h}x{w}")
    ho, wo = out_size(h, k, stride, 0), out_size(w, k, stride, 0)
    x4 = np.asarray(x, dtype=DTYPE).reshape(n, c, h, w)
    win = sliding_window_view(x4, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = win.max(axis=(4, 5))
    return out.reshape(shape[:-2] + (ho, wo)) if len(shape) >= 2 else out


def prelu(x: np.ndarray, slopes) -> np.ndarray:
    """y = x for x > 0, slope_c * x otherwise (per channel)."""
    n, c, h, w = nchw(x.shape)
    slopes = np.asarray(slopes, dtype=DTYPE).reshape(-1)
    if slopes.size != c:
        raise ShapeError(f"prelu has {slopes.size} slopes for {c} channels")
    x4 = np.asarray(x, dtype=DTYPE).reshape(n, c, h, w)
    # max/min split is exact and much faster than np.where
    y = np.maximum(x4, DTYPE(0)) + slopes[None, :, None, None] * np.minimum(x4, DTYPE(0))
    return y.reshape(x.shape)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), DTYPE(0))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE).reshape(-1)
    if z.size == 0:
        raise ShapeError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains NaN or inf")
    e = np.exp(z - z.max())
    return (e / e.sum()).astype(DTYPE)
