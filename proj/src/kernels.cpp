#include "ct/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <type_traits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ct::kernels {

namespace {

// Training churns through multi-megabyte activation and im2col buffers every
// batch; keep those allocations on the heap instead of mmap/munmap round
// trips (which cost page faults plus kernel page zeroing each time).
[[maybe_unused]] const bool g_malloc_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
    return true;
}();

}  // namespace

bool avx2_available() {
#if defined(CT_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

namespace {

Backend detect() {
    if (const char* env = std::getenv("CT_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Backend::avx2;
    }
    return avx2_available() ? Backend::avx2 : Backend::scalar;
}

Backend g_backend = detect();

}  // namespace

Backend active() { return g_backend; }

void force(Backend b) {
    if (b == Backend::avx2 && !avx2_available()) return;
    g_backend = b;
}

void reset_to_detected() { g_backend = detect(); }

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

#if defined(CT_HAVE_AVX2_TU)
#define CT_DISPATCH(fn, ...)                                          \
    if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) { \
        if (g_backend == Backend::avx2) {                             \
            avx2_impl::fn(__VA_ARGS__);                               \
            return;                                                   \
        }                                                             \
    }                                                                 \
    scalar_impl::fn(__VA_ARGS__)
#else
#define CT_DISPATCH(fn, ...) scalar_impl::fn(__VA_ARGS__)
#endif

template <typename T>
void add(const T* a, const T* b, T* out, std::int64_t n) {
    CT_DISPATCH(add, a, b, out, n);
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::int64_t n) {
    CT_DISPATCH(sub, a, b, out, n);
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::int64_t n) {
    CT_DISPATCH(mul, a, b, out, n);
}

template <typename T>
void relu(const T* x, T* out, std::int64_t n) {
    CT_DISPATCH(relu, x, out, n);
}

template <typename T>
void relu_mask(const T* x, const T* g, T* out, std::int64_t n) {
    CT_DISPATCH(relu_mask, x, g, out, n);
}

template <typename T>
void affine(const T* x, T a, T b, T* out, std::int64_t n) {
    CT_DISPATCH(affine, x, a, b, out, n);
}

template <typename T>
void accumulate(T* dst, const T* src, std::int64_t n) {
    CT_DISPATCH(accumulate, dst, src, n);
}

template <typename T>
void axpy(T* dst, const T* src, T a, std::int64_t n) {
    CT_DISPATCH(axpy, dst, src, a, n);
}

template <typename T>
void add_scalar(const T* x, T s, T* out, std::int64_t n) {
    CT_DISPATCH(add_scalar, x, s, out, n);
}

template <typename T>
void gemm(const T* A, const T* B, T* C, int m, int k, int n) {
    CT_DISPATCH(gemm, A, B, C, m, k, n);
}

template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n) {
    CT_DISPATCH(gemm_nt, A, B, C, m, k, n);
}

template <typename T>
void transpose(const T* A, T* out, int rows, int cols) {
    // Simple blocked transpose; not ISA-dispatched because it is pure data
    // movement and already bitwise identical everywhere.
    constexpr int BS = 32;
    for (int r0 = 0; r0 < rows; r0 += BS)
        for (int c0 = 0; c0 < cols; c0 += BS) {
            int r1 = r0 + BS < rows ? r0 + BS : rows;
            int c1 = c0 + BS < cols ? c0 + BS : cols;
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c)
                    out[static_cast<std::int64_t>(c) * rows + r] = A[static_cast<std::int64_t>(r) * cols + c];
        }
}

#undef CT_DISPATCH

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
template void add_scalar<float>(const float*, float, float*, std::int64_t);
template void add_scalar<double>(const double*, double, double*, std::int64_t);
template void axpy<float>(float*, const float*, float, std::int64_t);
template void axpy<double>(double*, const double*, double, std::int64_t);
template void gemm<float>(const float*, const float*, float*, int, int, int);
template void gemm<double>(const double*, const double*, double*, int, int, int);
template void gemm_nt<float>(const float*, const float*, float*, int, int, int);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int);
template void transpose<float>(const float*, float*, int, int);
template void transpose<double>(const double*, double*, int, int);

}  // namespace ct::kernels
