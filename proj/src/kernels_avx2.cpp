#include "ct/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

// AVX2 variants. Multiply and add stay separate (no FMA) and lanes only span
// independent outputs, so every element sees the exact operation sequence of
// the scalar reference.

namespace ct::kernels::avx2_impl {

void add(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu(const float* x, float* out, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_mask(const float* x, const float* g, float* out, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(out + i, _mm256_and_ps(mask, _mm256_loadu_ps(g + i)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

void affine(const float* x, float a, float b, float* out, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(a);
    const __m256 vb = _mm256_set1_ps(b);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_mul_ps(va, _mm256_loadu_ps(x + i)), vb));
    for (; i < n; ++i) out[i] = a * x[i] + b;
}

void accumulate(float* dst, const float* src, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), _mm256_loadu_ps(src + i)));
    for (; i < n; ++i) dst[i] += src[i];
}

void axpy(float* dst, const float* src, float a, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i),
                                                _mm256_mul_ps(va, _mm256_loadu_ps(src + i))));
    for (; i < n; ++i) dst[i] += a * src[i];
}

void add_scalar(const float* x, float s, float* out, std::int64_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), vs));
    for (; i < n; ++i) out[i] = x[i] + s;
}

// 4-row by 16-column register tile; k is the inner loop so each C element
// accumulates over k in ascending order, matching the scalar reference.
void gemm(const float* A, const float* B, float* C, int m, int k, int n) {
    int j = 0;
    for (; j + 16 <= n; j += 16) {
        int i = 0;
        for (; i + 4 <= m; i += 4) {
            __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
            __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
            __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
            __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
            const float* a0 = A + static_cast<std::int64_t>(i) * k;
            const float* a1 = a0 + k;
            const float* a2 = a1 + k;
            const float* a3 = a2 + k;
            for (int p = 0; p < k; ++p) {
                const float* brow = B + static_cast<std::int64_t>(p) * n + j;
                __m256 b0 = _mm256_loadu_ps(brow);
                __m256 b1 = _mm256_loadu_ps(brow + 8);
                __m256 v;
                v = _mm256_set1_ps(a0[p]);
                c00 = _mm256_add_ps(c00, _mm256_mul_ps(v, b0));
                c01 = _mm256_add_ps(c01, _mm256_mul_ps(v, b1));
                v = _mm256_set1_ps(a1[p]);
                c10 = _mm256_add_ps(c10, _mm256_mul_ps(v, b0));
                c11 = _mm256_add_ps(c11, _mm256_mul_ps(v, b1));
                v = _mm256_set1_ps(a2[p]);
                c20 = _mm256_add_ps(c20, _mm256_mul_ps(v, b0));
                c21 = _mm256_add_ps(c21, _mm256_mul_ps(v, b1));
                v = _mm256_set1_ps(a3[p]);
                c30 = _mm256_add_ps(c30, _mm256_mul_ps(v, b0));
                c31 = _mm256_add_ps(c31, _mm256_mul_ps(v, b1));
            }
            float* crow = C + static_cast<std::int64_t>(i) * n + j;
            _mm256_storeu_ps(crow, c00);
            _mm256_storeu_ps(crow + 8, c01);
            _mm256_storeu_ps(crow + n, c10);
            _mm256_storeu_ps(crow + n + 8, c11);
            _mm256_storeu_ps(crow + 2 * n, c20);
            _mm256_storeu_ps(crow + 2 * n + 8, c21);
            _mm256_storeu_ps(crow + 3 * n, c30);
            _mm256_storeu_ps(crow + 3 * n + 8, c31);
        }
        for (; i < m; ++i) {
            __m256 c0 = _mm256_setzero_ps(), c1 = _mm256_setzero_ps();
            const float* arow = A + static_cast<std::int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const float* brow = B + static_cast<std::int64_t>(p) * n + j;
                __m256 v = _mm256_set1_ps(arow[p]);
                c0 = _mm256_add_ps(c0, _mm256_mul_ps(v, _mm256_loadu_ps(brow)));
                c1 = _mm256_add_ps(c1, _mm256_mul_ps(v, _mm256_loadu_ps(brow + 8)));
            }
            float* crow = C + static_cast<std::int64_t>(i) * n + j;
            _mm256_storeu_ps(crow, c0);
            _mm256_storeu_ps(crow + 8, c1);
        }
    }
    if (j + 8 <= n) {
        for (int i = 0; i < m; ++i) {
            __m256 c0 = _mm256_setzero_ps();
            const float* arow = A + static_cast<std::int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                __m256 v = _mm256_set1_ps(arow[p]);
                c0 = _mm256_add_ps(c0, _mm256_mul_ps(v, _mm256_loadu_ps(B + static_cast<std::int64_t>(p) * n + j)));
            }
            _mm256_storeu_ps(C + static_cast<std::int64_t>(i) * n + j, c0);
        }
        j += 8;
    }
    if (j < n) {
        for (int i = 0; i < m; ++i) {
            float* crow = C + static_cast<std::int64_t>(i) * n;
            for (int jj = j; jj < n; ++jj) crow[jj] = 0.0f;
            const float* arow = A + static_cast<std::int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const float a = arow[p];
                const float* brow = B + static_cast<std::int64_t>(p) * n;
                for (int jj = j; jj < n; ++jj) crow[jj] += a * brow[jj];
            }
        }
    }
}

// Same striped 8-lane reduction as the scalar reference: the vector loop is
// lanes 0..7 in ascending k, the tail and the folding tree are identical.
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n) {
    auto finish = [](__m256 vacc, const float* arow, const float* brow, int p, int k) {
        alignas(32) float acc[8];
        _mm256_store_ps(acc, vacc);
        for (; p < k; ++p) acc[p & 7] += arow[p] * brow[p];
        const float s0 = acc[0] + acc[4];
        const float s1 = acc[1] + acc[5];
        const float s2 = acc[2] + acc[6];
        const float s3 = acc[3] + acc[7];
        return (s0 + s2) + (s1 + s3);
    };
    for (int i = 0; i < m; ++i) {
        const float* arow = A + static_cast<std::int64_t>(i) * k;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = B + static_cast<std::int64_t>(j) * k;
            const float* b1 = b0 + k;
            const float* b2 = b1 + k;
            const float* b3 = b2 + k;
            __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
            __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
            int p = 0;
            for (; p + 8 <= k; p += 8) {
                const __m256 va = _mm256_loadu_ps(arow + p);
                a0 = _mm256_add_ps(a0, _mm256_mul_ps(va, _mm256_loadu_ps(b0 + p)));
                a1 = _mm256_add_ps(a1, _mm256_mul_ps(va, _mm256_loadu_ps(b1 + p)));
                a2 = _mm256_add_ps(a2, _mm256_mul_ps(va, _mm256_loadu_ps(b2 + p)));
                a3 = _mm256_add_ps(a3, _mm256_mul_ps(va, _mm256_loadu_ps(b3 + p)));
            }
            float* crow = C + static_cast<std::int64_t>(i) * n + j;
            crow[0] = finish(a0, arow, b0, p, k);
            crow[1] = finish(a1, arow, b1, p, k);
            crow[2] = finish(a2, arow, b2, p, k);
            crow[3] = finish(a3, arow, b3, p, k);
        }
        for (; j < n; ++j) {
            const float* brow = B + static_cast<std::int64_t>(j) * k;
            __m256 vacc = _mm256_setzero_ps();
            int p = 0;
            for (; p + 8 <= k; p += 8)
                vacc = _mm256_add_ps(vacc, _mm256_mul_ps(_mm256_loadu_ps(arow + p),
                                                         _mm256_loadu_ps(brow + p)));
            C[static_cast<std::int64_t>(i) * n + j] = finish(vacc, arow, brow, p, k);
        }
    }
}

void add(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu(const double* x, double* out, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_mask(const double* x, const double* g, double* out, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void affine(const double* x, double a, double b, double* out, std::int64_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(va, _mm256_loadu_pd(x + i)), vb));
    for (; i < n; ++i) out[i] = a * x[i] + b;
}

void accumulate(double* dst, const double* src, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i), _mm256_loadu_pd(src + i)));
    for (; i < n; ++i) dst[i] += src[i];
}

void axpy(double* dst, const double* src, double a, std::int64_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(dst + i),
                                                _mm256_mul_pd(va, _mm256_loadu_pd(src + i))));
    for (; i < n; ++i) dst[i] += a * src[i];
}

void add_scalar(const double* x, double s, double* out, std::int64_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), vs));
    for (; i < n; ++i) out[i] = x[i] + s;
}

void gemm(const double* A, const double* B, double* C, int m, int k, int n) {
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        int i = 0;
        for (; i + 2 <= m; i += 2) {
            __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
            __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
            const double* a0 = A + static_cast<std::int64_t>(i) * k;
            const double* a1 = a0 + k;
            for (int p = 0; p < k; ++p) {
                const double* brow = B + static_cast<std::int64_t>(p) * n + j;
                __m256d b0 = _mm256_loadu_pd(brow);
                __m256d b1 = _mm256_loadu_pd(brow + 4);
                __m256d v = _mm256_set1_pd(a0[p]);
                c00 = _mm256_add_pd(c00, _mm256_mul_pd(v, b0));
                c01 = _mm256_add_pd(c01, _mm256_mul_pd(v, b1));
                v = _mm256_set1_pd(a1[p]);
                c10 = _mm256_add_pd(c10, _mm256_mul_pd(v, b0));
                c11 = _mm256_add_pd(c11, _mm256_mul_pd(v, b1));
            }
            double* crow = C + static_cast<std::int64_t>(i) * n + j;
            _mm256_storeu_pd(crow, c00);
            _mm256_storeu_pd(crow + 4, c01);
            _mm256_storeu_pd(crow + n, c10);
            _mm256_storeu_pd(crow + n + 4, c11);
        }
        for (; i < m; ++i) {
            __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
            const double* arow = A + static_cast<std::int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const double* brow = B + static_cast<std::int64_t>(p) * n + j;
                __m256d v = _mm256_set1_pd(arow[p]);
                c0 = _mm256_add_pd(c0, _mm256_mul_pd(v, _mm256_loadu_pd(brow)));
                c1 = _mm256_add_pd(c1, _mm256_mul_pd(v, _mm256_loadu_pd(brow + 4)));
            }
            double* crow = C + static_cast<std::int64_t>(i) * n + j;
            _mm256_storeu_pd(crow, c0);
            _mm256_storeu_pd(crow + 4, c1);
        }
    }
    if (j < n) {
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<std::int64_t>(i) * n;
            for (int jj = j; jj < n; ++jj) crow[jj] = 0.0;
            const double* arow = A + static_cast<std::int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const double a = arow[p];
                const double* brow = B + static_cast<std::int64_t>(p) * n;
                for (int jj = j; jj < n; ++jj) crow[jj] += a * brow[jj];
            }
        }
    }
}

void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + static_cast<std::int64_t>(j) * k;
            __m256d vlo = _mm256_setzero_pd();  // lanes 0..3
            __m256d vhi = _mm256_setzero_pd();  // lanes 4..7
            int p = 0;
            for (; p + 8 <= k; p += 8) {
                vlo = _mm256_add_pd(vlo, _mm256_mul_pd(_mm256_loadu_pd(arow + p),
                                                       _mm256_loadu_pd(brow + p)));
                vhi = _mm256_add_pd(vhi, _mm256_mul_pd(_mm256_loadu_pd(arow + p + 4),
                                                       _mm256_loadu_pd(brow + p + 4)));
            }
            alignas(32) double acc[8];
            _mm256_store_pd(acc, vlo);
            _mm256_store_pd(acc + 4, vhi);
            for (; p < k; ++p) acc[p & 7] += arow[p] * brow[p];
            const double s0 = acc[0] + acc[4];
            const double s1 = acc[1] + acc[5];
            const double s2 = acc[2] + acc[6];
            const double s3 = acc[3] + acc[7];
            C[static_cast<std::int64_t>(i) * n + j] = (s0 + s2) + (s1 + s3);
        }
    }
}

}  // namespace ct::kernels::avx2_impl

#endif  // __AVX2__
