/* Hot loops of the XNOR path, kept in C so the vector code is explicit. */
#ifndef BITCONV_BITOPS_H
#define BITCONV_BITOPS_H

#include <stdint.h>
#include <stddef.h>
#include <math.h>

#if defined(__AVX512F__) && defined(__AVX512VPOPCNTDQ__)
#include <immintrin.h>
#define BC_HAVE_AVX512_POPCNT 1
#else
#define BC_HAVE_AVX512_POPCNT 0
#endif

#define BC_TILE 32

static inline int bc_simd(void) { return BC_HAVE_AVX512_POPCNT; }

/* out[i, j] = nbits - 2 * popcount(a[i, :] ^ bt[:, j]).
 * a is row-major [m, nw]; bt is word-major [nw, n]. */
static void bc_gemm(const uint64_t *restrict a, const uint64_t *restrict bt,
                    ptrdiff_t m, ptrdiff_t n, ptrdiff_t nw, ptrdiff_t nbits,
                    int32_t *restrict out)
{
    ptrdiff_t nb = n - n % BC_TILE;
    for (ptrdiff_t j0 = 0; j0 < nb; j0 += BC_TILE) {
        for (ptrdiff_t i = 0; i < m; i++) {
            const uint64_t *ar = a + i * nw;
            uint64_t acc[BC_TILE];
#if BC_HAVE_AVX512_POPCNT
            __m512i c0 = _mm512_setzero_si512(), c1 = c0, c2 = c0, c3 = c0;
            for (ptrdiff_t t = 0; t < nw; t++) {
                __m512i x = _mm512_set1_epi64((long long)ar[t]);
                const uint64_t *br = bt + t * n + j0;
                c0 = _mm512_add_epi64(c0, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512(br))));
                c1 = _mm512_add_epi64(c1, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512(br + 8))));
                c2 = _mm512_add_epi64(c2, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512(br + 16))));
                c3 = _mm512_add_epi64(c3, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512(br + 24))));
            }
            _mm512_storeu_si512(acc, c0);
            _mm512_storeu_si512(acc + 8, c1);
            _mm512_storeu_si512(acc + 16, c2);
            _mm512_storeu_si512(acc + 24, c3);
#else
            for (int j = 0; j < BC_TILE; j++) acc[j] = 0;
            for (ptrdiff_t t = 0; t < nw; t++) {
                uint64_t x = ar[t];
                const uint64_t *br = bt + t * n + j0;
                for (int j = 0; j < BC_TILE; j++) acc[j] += (uint64_t)__builtin_popcountll(x ^ br[j]);
            }
#endif
            int32_t *orow = out + i * n + j0;
            for (int j = 0; j < BC_TILE; j++) orow[j] = (int32_t)(nbits - 2 * (ptrdiff_t)acc[j]);
        }
    }
    for (ptrdiff_t i = 0; i < m; i++) {
        const uint64_t *ar = a + i * nw;
        for (ptrdiff_t j = nb; j < n; j++) {
            uint64_t s = 0;
            for (ptrdiff_t t = 0; t < nw; t++) s += (uint64_t)__builtin_popcountll(ar[t] ^ bt[t * n + j]);
            out[i * n + j] = (int32_t)(nbits - 2 * (ptrdiff_t)s);
        }
    }
}

/* Pack channel signs of a [c, hw] image into [hw, cw] words; optionally
 * also write the channel-mean of |x| per pixel. word is scratch of hw. */
static void bc_pack_hwc(const float *restrict x, ptrdiff_t c, ptrdiff_t hw, ptrdiff_t cw,
                        uint64_t *restrict out, float *restrict absmean,
                        uint64_t *restrict word)
{
    if (absmean)
        for (ptrdiff_t p = 0; p < hw; p++) absmean[p] = 0.0f;
    for (ptrdiff_t t = 0; t < cw; t++) {
        ptrdiff_t lo = t * 64, hi = lo + 64 < c ? lo + 64 : c;
        for (ptrdiff_t p = 0; p < hw; p++) word[p] = 0;
        for (ptrdiff_t ch = lo; ch < hi; ch++) {
            const float *row = x + ch * hw;
            uint64_t shift = (uint64_t)(ch - lo);
            for (ptrdiff_t p = 0; p < hw; p++) word[p] |= (uint64_t)(row[p] >= 0.0f) << shift;
            if (absmean)
                for (ptrdiff_t p = 0; p < hw; p++) absmean[p] += fabsf(row[p]);
        }
        for (ptrdiff_t p = 0; p < hw; p++) out[p * cw + t] = word[p];
    }
    if (absmean) {
        float inv = 1.0f / (float)c;
        for (ptrdiff_t p = 0; p < hw; p++) absmean[p] *= inv;
    }
}

/* y[f, p] = alpha[f] * (dots[f, p] - corr[f, p]) * k[p] + bias[f];
 * corr and k may be NULL. */
static void bc_scale(const int32_t *restrict dots, const int32_t *restrict corr,
                     const float *restrict alpha, const float *restrict k,
                     const float *restrict bias, ptrdiff_t m, ptrdiff_t n,
                     float *restrict y)
{
    for (ptrdiff_t f = 0; f < m; f++) {
        const int32_t *d = dots + f * n;
        const int32_t *cr = corr ? corr + f * n : NULL;
        float *yr = y + f * n;
        float a = alpha[f], b = bias[f];
        for (ptrdiff_t p = 0; p < n; p++) {
            float v = (float)(cr ? d[p] - cr[p] : d[p]) * a;
            if (k) v *= k[p];
            yr[p] = v + b;
        }
    }
}

#endif
