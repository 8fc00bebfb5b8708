"""Pure numpy versions of the compiled kernels in ``_xnor.pyx``.

Same signatures and bit layout; used when the extension is not built or
``BITCONV_PURE`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WORD = 64


def words_for(n):
    return (n + WORD - 1) // WORD


def pack_rows(x):
    x = np.asarray(x)
    rows, cols = x.shape
    nw = words_for(cols)
    bits = np.zeros((rows, nw * WORD), dtype=bool)
    bits[:, :cols] = x >= 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False).reshape(rows, nw)


def binary_gemm(a, b, nbits, chunk=1 << 22):
    m, nw = a.shape
    n = b.shape[0]
    if b.shape[1] != nw:
        raise ValueError("operands packed to different word counts")
    out = np.empty((m, n), dtype=np.int32)
    step = max(1, chunk // max(1, n * nw))
    for i in range(0, m, step):
        diff = np.bitwise_count(a[i:i + step, None, :] ^ b[None, :, :])
        out[i:i + step] = nbits - 2 * diff.sum(axis=2, dtype=np.int64)
    return out


def simd_enabled():
    return False


def pack_hwc(x, with_abs=False):
    x = np.asarray(x)
    c, h, w = x.shape
    flat = np.ascontiguousarray(x.transpose(1, 2, 0)).reshape(h * w, c)
    packed = pack_rows(flat).reshape(h, w, -1)
    if not with_abs:
        return packed
    return packed, np.abs(x).mean(axis=0, dtype=np.float32)


def scale_dots(dots, corr, alpha, k, bias):
    d = dots if corr is None else dots - corr
    y = d.astype(np.float32) * alpha[:, None]
    if k is not None:
        y *= k[None, :]
    return y + bias[:, None]


def im2col_hwc(px, k, stride, pad, padword):
    h, w, cw = px.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        full = np.empty((h + 2 * pad, w + 2 * pad, cw), dtype=np.uint64)
        full[:] = padword
        full[pad:pad + h, pad:pad + w] = px
        px = full
    win = sliding_window_view(px, (k, k), axis=(0, 1))[::stride, ::stride][:ho, :wo]
    # win: Ho, Wo, cw, k, k
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(ho * wo, k * k * cw)
