#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

// Internal dense kernels. Every C[i][j] is accumulated strictly in k-order, so
// results are a pure function of the inputs (bitwise reproducible) regardless
// of how callers batch their rows.
namespace mates::kernel {

inline void mm_scalar(const double* A, const double* B, double* C, std::int64_t m,
                      std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* c = C + static_cast<std::size_t>(i) * n;
        for (std::int64_t j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + static_cast<std::size_t>(i) * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + static_cast<std::size_t>(p) * n;
            for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

#if defined(__AVX512F__)

// 4-row by 16-column register tile, FMA accumulation serial in k.
inline void mm(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    std::int64_t i0 = 0;
    for (; i0 + 4 <= m; i0 += 4) {
        const double* a0 = A + static_cast<std::size_t>(i0 + 0) * k;
        const double* a1 = A + static_cast<std::size_t>(i0 + 1) * k;
        const double* a2 = A + static_cast<std::size_t>(i0 + 2) * k;
        const double* a3 = A + static_cast<std::size_t>(i0 + 3) * k;
        std::int64_t j0 = 0;
        for (; j0 + 16 <= n; j0 += 16) {
            __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd();
            __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd();
            __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd();
            __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd();
            for (std::int64_t p = 0; p < k; ++p) {
                const double* b = B + static_cast<std::size_t>(p) * n + j0;
                const __m512d b0 = _mm512_loadu_pd(b);
                const __m512d b1 = _mm512_loadu_pd(b + 8);
                const __m512d v0 = _mm512_set1_pd(a0[p]);
                const __m512d v1 = _mm512_set1_pd(a1[p]);
                const __m512d v2 = _mm512_set1_pd(a2[p]);
                const __m512d v3 = _mm512_set1_pd(a3[p]);
                c00 = _mm512_fmadd_pd(v0, b0, c00);
                c01 = _mm512_fmadd_pd(v0, b1, c01);
                c10 = _mm512_fmadd_pd(v1, b0, c10);
                c11 = _mm512_fmadd_pd(v1, b1, c11);
                c20 = _mm512_fmadd_pd(v2, b0, c20);
                c21 = _mm512_fmadd_pd(v2, b1, c21);
                c30 = _mm512_fmadd_pd(v3, b0, c30);
                c31 = _mm512_fmadd_pd(v3, b1, c31);
            }
            double* c = C + static_cast<std::size_t>(i0) * n + j0;
            _mm512_storeu_pd(c, c00);
            _mm512_storeu_pd(c + 8, c01);
            _mm512_storeu_pd(c + n, c10);
            _mm512_storeu_pd(c + n + 8, c11);
            _mm512_storeu_pd(c + 2 * n, c20);
            _mm512_storeu_pd(c + 2 * n + 8, c21);
            _mm512_storeu_pd(c + 3 * n, c30);
            _mm512_storeu_pd(c + 3 * n + 8, c31);
        }
        for (; j0 < n; ++j0) {
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::int64_t p = 0; p < k; ++p) {
                const double b = B[static_cast<std::size_t>(p) * n + j0];
                s0 += a0[p] * b;
                s1 += a1[p] * b;
                s2 += a2[p] * b;
                s3 += a3[p] * b;
            }
            C[static_cast<std::size_t>(i0 + 0) * n + j0] = s0;
            C[static_cast<std::size_t>(i0 + 1) * n + j0] = s1;
            C[static_cast<std::size_t>(i0 + 2) * n + j0] = s2;
            C[static_cast<std::size_t>(i0 + 3) * n + j0] = s3;
        }
    }
    for (; i0 < m; ++i0) {
        const double* a = A + static_cast<std::size_t>(i0) * k;
        std::int64_t j0 = 0;
        for (; j0 + 16 <= n; j0 += 16) {
            __m512d c0 = _mm512_setzero_pd(), c1 = _mm512_setzero_pd();
            for (std::int64_t p = 0; p < k; ++p) {
                const double* b = B + static_cast<std::size_t>(p) * n + j0;
                const __m512d v = _mm512_set1_pd(a[p]);
                c0 = _mm512_fmadd_pd(v, _mm512_loadu_pd(b), c0);
                c1 = _mm512_fmadd_pd(v, _mm512_loadu_pd(b + 8), c1);
            }
            _mm512_storeu_pd(C + static_cast<std::size_t>(i0) * n + j0, c0);
            _mm512_storeu_pd(C + static_cast<std::size_t>(i0) * n + j0 + 8, c1);
        }
        for (; j0 < n; ++j0) {
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += a[p] * B[static_cast<std::size_t>(p) * n + j0];
            C[static_cast<std::size_t>(i0) * n + j0] = s;
        }
    }
}

#else

inline void mm(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    mm_scalar(A, B, C, m, k, n);
}

#endif

inline void transpose(const double* A, double* At, std::int64_t m, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            At[static_cast<std::size_t>(j) * m + i] = A[static_cast<std::size_t>(i) * n + j];
}

// C += A·B, same accumulation order as mm on a scratch buffer.
inline void mm_acc(const double* A, const double* B, double* C, std::int64_t m, std::int64_t k,
                   std::int64_t n, std::vector<double>& scratch) {
    scratch.resize(static_cast<std::size_t>(m) * n);
    mm(A, B, scratch.data(), m, k, n);
    const std::size_t total = static_cast<std::size_t>(m) * n;
    for (std::size_t i = 0; i < total; ++i) C[i] += scratch[i];
}

}  // namespace mates::kernel
