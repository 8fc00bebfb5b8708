"""Bit-packed XNOR convolution path.

Weights and activations are reduced to their signs and packed 64 per
word; a dot product of two +/-1 vectors of length n is then
``n - 2 * popcount(a ^ b)``. Per-filter scaling factors (mean absolute
weight) and an optional per-position input factor restore magnitude.

The packing and gemm kernels come from the compiled ``_xnor`` extension
when it is available, otherwise from the numpy implementation in
``_fallback``. Set ``BITCONV_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _fallback
from .errors import ShapeError
from .kernels import ConvParams, im2col, out_size
from .tensor import DTYPE, nchw

try:
    if os.environ.get("BITCONV_PURE"):
        raise ImportError("pure-python backend requested")
    from . import _xnor as _compiled
except ImportError:
    _compiled = None

_core = _compiled if _compiled is not None else _fallback
BACKEND = "compiled" if _compiled is not None else "python"

# the compiled kernels are written for 64-bit words
WORD_BITS = 64


def words_for(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


@dataclass(frozen=True)
class BitTensor:
    """Packed signs of a flat vector; unused tail bits are zero."""

    bits: np.ndarray
    n: int

    def __post_init__(self):
        if self.bits.dtype != np.uint64 or self.bits.shape != (words_for(self.n),):
            raise ShapeError(f"{self.bits.shape} words cannot hold {self.n} bits")

    @property
    def nbytes(self) -> int:
        return self.bits.nbytes


@dataclass(frozen=True)
class BitMatrix:
    """A matrix packed one row (``order='rows'``) or one column per word run.

    ``shape`` is the logical (rows, cols) shape. For column order the
    words array has one entry per logical column.
    """

    bits: np.ndarray
    shape: tuple[int, int]
    order: str = "rows"

    @property
    def inner(self) -> int:
        return self.shape[1] if self.order == "rows" else self.shape[0]

    @property
    def nbytes(self) -> int:
        return self.bits.nbytes


def pack_signs(v) -> BitTensor:
    v = np.asarray(v, dtype=DTYPE).reshape(1, -1)
    return BitTensor(_core.pack_rows(np.ascontiguousarray(v))[0].copy(), v.shape[1])


def unpack_signs(b: BitTensor | BitMatrix) -> np.ndarray:
    """Expand packed bits back to a float array of +/-1."""
    words = np.atleast_2d(b.bits)
    n = b.n if isinstance(b, BitTensor) else b.inner
    raw = np.unpackbits(words.astype("<u8").view(np.uint8), axis=1, bitorder="little")[:, :n]
    signs = raw.astype(DTYPE) * 2 - 1
    if isinstance(b, BitTensor):
        return signs[0]
    return signs if b.order == "rows" else signs.T.copy()


def pack_matrix(m, order: str = "rows") -> BitMatrix:
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"pack_matrix needs a 2-D array, got {m.shape}")
    src = m if order == "rows" else m.T
    return BitMatrix(_core.pack_rows(np.ascontiguousarray(src)), m.shape, order)


def sign(x) -> np.ndarray:
    """Sign with sign(0) = +1, matching the packing rule."""
    return np.where(np.asarray(x) >= 0, DTYPE(1), DTYPE(-1))


def xnor_dot(a: BitTensor, b: BitTensor) -> int:
    if a.n != b.n:
        raise ShapeError(f"xnor_dot length mismatch {a.n} vs {b.n}")
    return int(_core.binary_gemm(a.bits[None], b.bits[None], a.n)[0, 0])


def binary_gemm(a: BitMatrix, b: BitMatrix) -> np.ndarray:
    """Integer product of a row-packed m x k and a column-packed k x n matrix."""
    if a.order != "rows" or b.order != "cols":
        raise ShapeError("binary_gemm wants a row-packed left and column-packed right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"binary_gemm shapes {a.shape} x {b.shape} do not agree")
    return _core.binary_gemm(a.bits, b.bits, a.shape[1])


def channel_words(channels: int) -> int:
    return words_for(channels)


def pad_word(channels: int) -> np.ndarray:
    """Word block of a padding pixel: every real channel reads +1."""
    return pack_hwc(np.zeros((channels, 1, 1), dtype=DTYPE))[0, 0]


def pack_hwc(x: np.ndarray) -> np.ndarray:
    """[C, H, W] floats -> [H, W, ceil(C/64)] words of per-pixel channel signs."""
    return _core.pack_hwc(np.ascontiguousarray(x, dtype=DTYPE))


def binary_im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> BitMatrix:
    """Packed sign im2col of a [C, H, W] image as a column-packed matrix.

    Each column (output position) holds its receptive field ordered kernel
    row, kernel column, channel, with every pixel's channels padded to a
    whole number of words. Padding taps read as +1 (the sign of 0).
    """
    c, h, w = x.shape
    ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    words = _core.im2col_hwc(pack_hwc(x), k, stride, pad, pad_word(c))
    return BitMatrix(words, (k * k * channel_words(c) * WORD_BITS, ho * wo), "cols")


@dataclass
class BinarizedFilterBank:
    """Packed filter signs plus one scaling factor per filter.

    ``signs`` has one row per filter, laid out like :func:`binary_im2col`
    columns (kernel row, kernel column, channel; channels padded to whole
    words with zero bits), so a filter row and an im2col column can be
    XORed word for word. When the channel count is a multiple of 64 there
    is no padding and storage is exactly one bit per weight.
    """

    signs: BitMatrix
    alpha: np.ndarray
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    bias: np.ndarray | None = None
    _dense_signs: np.ndarray | None = field(default=None, repr=False)
    _corrections: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, dtype=DTYPE)
        self.alpha = np.ascontiguousarray(self.alpha, dtype=DTYPE)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    @property
    def sign_matrix(self) -> np.ndarray:
        """+/-1 signs as [out, in*k*k] in (channel, row, column) order."""
        if self._dense_signs is None:
            k, c = self.kernel, self.in_channels
            raw = unpack_signs(self.signs).reshape(self.out_channels, k, k, -1)[..., :c]
            self._dense_signs = np.ascontiguousarray(
                raw.transpose(0, 3, 1, 2).reshape(self.out_channels, -1))
        return self._dense_signs

    def pad_correction(self, h: int, w: int) -> np.ndarray:
        """int32 [out, Ho*Wo] term to subtract from the popcount dots.

        Padded taps pack as +1 while a zero-padded float conv sees 0, so the
        filter's sign sum over each position's padded taps is removed.
        """
        key = (h, w)
        if key not in self._corrections:
            k = self.kernel
            border, mask = _pad_mask(1, h, w, k, self.stride, self.pad)
            tap_sums = self.sign_matrix.reshape(self.out_channels, self.in_channels, k * k).sum(axis=1)
            corr = np.zeros((self.out_channels, _valid_counts(h, w, k, self.stride, self.pad).size),
                            dtype=np.int32)
            corr[:, border] = np.rint(tap_sums @ mask)
            self._corrections[key] = corr
        return self._corrections[key]

    def dense_weights(self) -> np.ndarray:
        """alpha_f * sign(W_f) as a float [out, in, k, k] array."""
        w = self.alpha[:, None] * self.sign_matrix
        return w.reshape(self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def nbytes(self) -> int:
        return self.signs.nbytes + self.alpha.nbytes


def pack_filters(weights: np.ndarray) -> BitMatrix:
    """[out, C, k, k] floats -> filter rows in the :func:`binary_im2col` layout."""
    out, c, k, _ = weights.shape
    cw = channel_words(c)
    hwc = np.full((out, k, k, cw * WORD_BITS), -1.0, dtype=DTYPE)
    hwc[..., :c] = weights.transpose(0, 2, 3, 1)
    return pack_matrix(hwc.reshape(out, -1), "rows")


def binarize_weights(p: ConvParams) -> BinarizedFilterBank:
    """Closed-form binary approximation W_f ~ alpha_f * sign(W_f)."""
    alpha = np.abs(p.weight_matrix).mean(axis=1).astype(DTYPE)
    return BinarizedFilterBank(
        signs=pack_filters(p.weights),
        alpha=alpha,
        in_channels=p.in_channels,
        out_channels=p.out_channels,
        kernel=p.kernel,
        stride=p.stride,
        pad=p.pad,
        bias=p.bias.copy(),
    )


@lru_cache(maxsize=64)
def _pad_mask(c: int, h: int, w: int, k: int, stride: int, pad: int):
    """Columns touching the border and their padded-tap indicator rows."""
    ones = np.ones((1, c, h, w), dtype=DTYPE)
    taps = im2col(ones, k, stride, pad)
    padded = 1.0 - taps
    border = np.flatnonzero(padded.any(axis=0))
    return border, np.ascontiguousarray(padded[:, border])


@lru_cache(maxsize=64)
def _valid_counts(h: int, w: int, k: int, stride: int, pad: int) -> np.ndarray:
    return im2col(np.ones((1, 1, h, w), dtype=DTYPE), k, stride, pad).sum(axis=0)


def box_average(a: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """k*k mean of a [H, W] map per output position, over in-image taps only."""
    h, w = a.shape
    if pad:
        a = np.pad(a, pad)
    win = np.lib.stride_tricks.sliding_window_view(a, (k, k))[::stride, ::stride]
    sums = win.sum(axis=(2, 3)).reshape(-1)
    return (sums / _valid_counts(h, w, k, stride, pad)).astype(DTYPE)


def input_scale(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Per-output-position factor: k*k average of the channel-mean |x|.

    The average only counts taps that fall inside the image, so a constant
    input gives a constant factor even at padded borders.
    """
    return box_average(np.abs(x).mean(axis=0, dtype=DTYPE), k, stride, pad)


def xnor_conv_forward(x: np.ndarray, f: BinarizedFilterBank, input_scaling: bool = True) -> np.ndarray:
    """Binary convolution of each image in ``x`` -> [N, out, Ho, Wo]."""
    n, c, h, w = nchw(x.shape)
    if c != f.in_channels:
        raise ShapeError(f"binary conv expects {f.in_channels} channels, got {c}")
    k, stride, pad = f.kernel, f.stride, f.pad
    ho, wo = out_size(h, k, stride, pad), out_size(w, k, stride, pad)
    x = np.ascontiguousarray(x, dtype=DTYPE).reshape(n, c, h, w)
    corr = f.pad_correction(h, w) if pad else None
    padword = pad_word(c)
    out = np.empty((n, f.out_channels, ho, wo), dtype=DTYPE)
    for i in range(n):
        if input_scaling:
            packed, absmean = _core.pack_hwc(x[i], True)
            scale = box_average(absmean, k, stride, pad)
        else:
            packed, scale = _core.pack_hwc(x[i]), None
        cols = _core.im2col_hwc(packed, k, stride, pad, padword)
        dots = _core.binary_gemm(f.signs.bits, cols, f.fan_in)
        y = _core.scale_dots(dots, corr, f.alpha, scale, f.bias)
        out[i] = y.reshape(f.out_channels, ho, wo)
    return out
