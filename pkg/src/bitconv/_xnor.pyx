# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled XNOR/popcount kernels.

Bit ``i`` of a packed row lives in word ``i // 64`` at bit position
``i % 64``; a set bit encodes +1, a clear bit -1. Unused tail bits are
always zero so popcount can run over whole words.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t

cnp.import_array()

cdef extern from "_bitops.h" nogil:
    int bc_simd()
    void bc_gemm(const uint64_t* a, const uint64_t* bt, Py_ssize_t m, Py_ssize_t n,
                 Py_ssize_t nw, Py_ssize_t nbits, int32_t* out)
    void bc_pack_hwc(const float* x, Py_ssize_t c, Py_ssize_t hw, Py_ssize_t cw,
                     uint64_t* out, float* absmean, uint64_t* word)
    void bc_scale(const int32_t* dots, const int32_t* corr, const float* alpha,
                  const float* k, const float* bias, Py_ssize_t m, Py_ssize_t n, float* y)

cdef enum:
    WORD = 64


def simd_enabled():
    """True when the gemm was built with the AVX-512 popcount path."""
    return bool(bc_simd())


cpdef Py_ssize_t words_for(Py_ssize_t n):
    return (n + WORD - 1) // WORD


def pack_rows(const float[:, ::1] x):
    """Pack the sign of each row of ``x`` (bit = x >= 0)."""
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t nw = words_for(cols)
    out = np.zeros((rows, nw), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef Py_ssize_t r, j
    with nogil:
        for r in range(rows):
            for j in range(cols):
                if x[r, j] >= 0:
                    o[r, j >> 6] |= (<uint64_t>1) << (j & 63)
    return out


def binary_gemm(const uint64_t[:, ::1] a, const uint64_t[:, ::1] b, Py_ssize_t nbits):
    """out[i, j] = nbits - 2 * popcount(a[i] ^ b[j]).

    ``a`` holds the rows of the left operand, ``b`` the columns of the
    right operand, both packed to the same word count.
    """
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], nw = a.shape[1]
    if b.shape[1] != nw:
        raise ValueError("operands packed to different word counts")
    out = np.empty((m, n), dtype=np.int32)
    if m == 0 or n == 0 or nw == 0:
        out[...] = nbits
        return out
    # word-major copy of b so a tile of columns is contiguous per word
    cdef const uint64_t[:, ::1] bt = np.ascontiguousarray(np.asarray(b).T)
    cdef int32_t[:, ::1] o = out
    with nogil:
        bc_gemm(&a[0, 0], &bt[0, 0], m, n, nw, nbits, &o[0, 0])
    return out


def pack_hwc(const float[:, :, ::1] x, bint with_abs=False):
    """Pack a [C, H, W] image pixel by pixel: [H, W, ceil(C / 64)] words.

    Bit ``c`` of a pixel's word block is the sign of channel ``c``; bits
    past the channel count stay zero. With ``with_abs`` also returns the
    [H, W] channel-mean of |x|.
    """
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t cw = words_for(c)
    out = np.empty((h, w, cw), dtype=np.uint64)
    scratch = np.empty(max(h * w, 1), dtype=np.uint64)
    absmean = np.empty((h, w), dtype=np.float32) if with_abs else None
    cdef uint64_t[:, :, ::1] o = out
    cdef uint64_t[::1] sc = scratch
    cdef float[:, ::1] am
    cdef float* amp = NULL
    if c == 0 or h == 0 or w == 0:
        return (out, absmean) if with_abs else out
    if with_abs:
        am = absmean
        amp = &am[0, 0]
    with nogil:
        bc_pack_hwc(&x[0, 0, 0], c, h * w, cw, &o[0, 0, 0], amp, &sc[0])
    return (out, absmean) if with_abs else out


def scale_dots(const int32_t[:, ::1] dots, corr, const float[::1] alpha, k,
               const float[::1] bias):
    """alpha[f] * (dots - corr) * k[p] + bias[f] as float32; corr, k optional."""
    cdef Py_ssize_t m = dots.shape[0], n = dots.shape[1]
    if alpha.shape[0] != m or bias.shape[0] != m:
        raise ValueError("alpha/bias length does not match dots")
    out = np.empty((m, n), dtype=np.float32)
    cdef float[:, ::1] y = out
    cdef const int32_t[:, ::1] cv
    cdef const float[::1] kv
    cdef const int32_t* cp = NULL
    cdef const float* kp = NULL
    if m == 0 or n == 0:
        return out
    if corr is not None:
        cv = corr
        if cv.shape[0] != m or cv.shape[1] != n:
            raise ValueError("correction shape does not match dots")
        cp = &cv[0, 0]
    if k is not None:
        kv = k
        if kv.shape[0] != n:
            raise ValueError("scale length does not match dots")
        kp = &kv[0]
    with nogil:
        bc_scale(&dots[0, 0], cp, &alpha[0], kp, &bias[0], m, n, &y[0, 0])
    return out


def im2col_hwc(const uint64_t[:, :, ::1] px, int k, int stride, int pad,
               const uint64_t[::1] padword):
    """Gather the k*k pixel word blocks of every output position.

    Row ``p`` of the result is output position ``p``; its words run over
    kernel row, kernel column, then channel word. Taps in the padding get
    ``padword``.
    """
    cdef Py_ssize_t h = px.shape[0], w = px.shape[1], cw = px.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out = np.empty((ho * wo, k * k * cw), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef Py_ssize_t oy, ox, ki, kj, iy, ix, t, col, pos
    with nogil:
        for oy in range(ho):
            for ox in range(wo):
                pos = oy * wo + ox
                col = 0
                for ki in range(k):
                    iy = oy * stride + ki - pad
                    for kj in range(k):
                        ix = ox * stride + kj - pad
                        if iy < 0 or iy >= h or ix < 0 or ix >= w:
                            for t in range(cw):
                                o[pos, col + t] = padword[t]
                        else:
                            for t in range(cw):
                                o[pos, col + t] = px[iy, ix, t]
                        col += cw
    return out
