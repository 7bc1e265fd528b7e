#pragma once

#include <cstdint>

// Data-parallel inner loops behind the tensor engine. Every kernel exists as
// a scalar reference implementation and, where it pays off, an AVX2 variant
// selected at runtime. The two paths are bit-identical by construction: SIMD
// lanes only span independent output elements, each output element keeps the
// scalar accumulation order, and the build disables FP contraction so neither
// path fuses multiply-add. Equivalence is enforced by tests, which is also
// what makes results reproducible across machines with different ISAs.

namespace ct::kernels {

enum class Backend { scalar, avx2 };

// Detected at first use; honors the CT_KERNELS env var ("scalar"/"avx2").
Backend active();
void force(Backend b);
void reset_to_detected();
const char* backend_name(Backend b);
bool avx2_available();

// Contiguous elementwise.
template <typename T> void add(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void relu(const T* x, T* out, std::int64_t n);
// out = g where x > 0, else 0
template <typename T> void relu_mask(const T* x, const T* g, T* out, std::int64_t n);
// out = a*x + b
template <typename T> void affine(const T* x, T a, T b, T* out, std::int64_t n);
// dst += src
template <typename T> void accumulate(T* dst, const T* src, std::int64_t n);
// dst += a * src
template <typename T> void axpy(T* dst, const T* src, T a, std::int64_t n);
// dst += a (broadcast scalar) applied to each of n elements of src: out = x + s
template <typename T> void add_scalar(const T* x, T s, T* out, std::int64_t n);

// C[m,n] = A[m,k] * B[k,n], all row-major, C overwritten.
template <typename T> void gemm(const T* A, const T* B, T* C, int m, int k, int n);

// C[m,n] = A[m,k] * B[n,k]^T (B stored row-major [n,k]). Both paths reduce
// over k through 8 striped accumulators folded in a fixed tree, so scalar
// and AVX2 stay bit-identical.
template <typename T> void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n);

// out[c,r] = A[r,c] for A with `rows` rows and `cols` cols (row-major).
template <typename T> void transpose(const T* A, T* out, int rows, int cols);

namespace scalar_impl {
template <typename T> void add(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::int64_t n);
template <typename T> void relu(const T* x, T* out, std::int64_t n);
template <typename T> void relu_mask(const T* x, const T* g, T* out, std::int64_t n);
template <typename T> void affine(const T* x, T a, T b, T* out, std::int64_t n);
template <typename T> void accumulate(T* dst, const T* src, std::int64_t n);
template <typename T> void axpy(T* dst, const T* src, T a, std::int64_t n);
template <typename T> void add_scalar(const T* x, T s, T* out, std::int64_t n);
template <typename T> void gemm(const T* A, const T* B, T* C, int m, int k, int n);
template <typename T> void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n);
}  // namespace scalar_impl

#if defined(CT_HAVE_AVX2_TU)
namespace avx2_impl {
void add(const float* a, const float* b, float* out, std::int64_t n);
void sub(const float* a, const float* b, float* out, std::int64_t n);
void mul(const float* a, const float* b, float* out, std::int64_t n);
void relu(const float* x, float* out, std::int64_t n);
void relu_mask(const float* x, const float* g, float* out, std::int64_t n);
void affine(const float* x, float a, float b, float* out, std::int64_t n);
void accumulate(float* dst, const float* src, std::int64_t n);
void axpy(float* dst, const float* src, float a, std::int64_t n);
void add_scalar(const float* x, float s, float* out, std::int64_t n);
void gemm(const float* A, const float* B, float* C, int m, int k, int n);
void gemm_nt(const float* A, const float* B, float* C, int m, int k, int n);

void add(const double* a, const double* b, double* out, std::int64_t n);
void sub(const double* a, const double* b, double* out, std::int64_t n);
void mul(const double* a, const double* b, double* out, std::int64_t n);
void relu(const double* x, double* out, std::int64_t n);
void relu_mask(const double* x, const double* g, double* out, std::int64_t n);
void affine(const double* x, double a, double b, double* out, std::int64_t n);
void accumulate(double* dst, const double* src, std::int64_t n);
void axpy(double* dst, const double* src, double a, std::int64_t n);
void add_scalar(const double* x, double s, double* out, std::int64_t n);
void gemm(const double* A, const double* B, double* C, int m, int k, int n);
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n);
}  // namespace avx2_impl
#endif

}  // namespace ct::kernels
