#include "ct/kernels.hpp"

// Reference kernels. These define the numeric contract: the AVX2 variants
// must reproduce them bit for bit. Each gemm output element accumulates over
// k in ascending order; the j loop is the innermost so the same element-wise
// operation order survives any lane width.

namespace ct::kernels::scalar_impl {

template <typename T>
void add(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void relu(const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_mask(const T* x, const T* g, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? g[i] : T(0);
}

template <typename T>
void affine(const T* x, T a, T b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a * x[i] + b;
}

template <typename T>
void accumulate(T* dst, const T* src, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
void axpy(T* dst, const T* src, T a, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

template <typename T>
void add_scalar(const T* x, T s, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] + s;
}

template <typename T>
void gemm(const T* A, const T* B, T* C, int m, int k, int n) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (int j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = A + i * k;
        for (int p = 0; p < k; ++p) {
            const T a = arow[p];
            const T* brow = B + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

template void add<float>(const float*, const float*, float*, std::int64_t);
template void add<double>(const double*, const double*, double*, std::int64_t);
template void sub<float>(const float*, const float*, float*, std::int64_t);
template void sub<double>(const double*, const double*, double*, std::int64_t);
template void mul<float>(const float*, const float*, float*, std::int64_t);
template void mul<double>(const double*, const double*, double*, std::int64_t);
template void relu<float>(const float*, float*, std::int64_t);
template void relu<double>(const double*, double*, std::int64_t);
template void relu_mask<float>(const float*, const float*, float*, std::int64_t);
template void relu_mask<double>(const double*, const double*, double*, std::int64_t);
template void affine<float>(const float*, float, float, float*, std::int64_t);
template void affine<double>(const double*, double, double, double*, std::int64_t);
template void accumulate<float>(float*, const float*, std::int64_t);
template void accumulate<double>(double*, const double*, std::int64_t);
template void axpy<float>(float*, const float*, float, std::int64_t);
template void axpy<double>(double*, const double*, double, std::int64_t);
template void add_scalar<float>(const float*, float, float*, std::int64_t);
template void add_scalar<double>(const double*, double, double*, std::int64_t);
template void gemm<float>(const float*, const float*, float*, int, int, int);
template void gemm<double>(const double*, const double*, double*, int, int, int);

// Striped dot product: 8 lanes over k, folded pairwise. The AVX2 variant
// reproduces exactly this order.
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = A + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = B + static_cast<std::int64_t>(j) * k;
            T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
            int p = 0;
            for (; p + 8 <= k; p += 8)
                for (int l = 0; l < 8; ++l) acc[l] += arow[p + l] * brow[p + l];
            for (; p < k; ++p) acc[p & 7] += arow[p] * brow[p];
            const T s0 = acc[0] + acc[4];
            const T s1 = acc[1] + acc[5];
            const T s2 = acc[2] + acc[6];
            const T s3 = acc[3] + acc[7];
            C[static_cast<std::int64_t>(i) * n + j] = (s0 + s2) + (s1 + s3);
        }
    }
}

template void gemm_nt<float>(const float*, const float*, float*, int, int, int);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int);

}  // namespace ct::kernels::scalar_impl
