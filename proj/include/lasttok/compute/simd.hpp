#pragma once

// Inner-loop kernels over contiguous double arrays. Every kernel has a scalar
// reference implementation and an AVX2+FMA variant; the variant is picked once
// at startup from CPUID and can be pinned with LASTTOK_SIMD=scalar.

#include <cstddef>
#include <string_view>

namespace lasttok::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA the running CPU supports.
Isa detected_isa();
/// ISA the dispatched kernels currently use.
Isa active_isa();
/// Pin the dispatched kernels (tests, benchmarking). Requesting an ISA the CPU
/// lacks falls back to scalar.
void set_active_isa(Isa isa);

double dot(const double* a, const double* b, std::size_t n);
/// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
/// C[m x n] += A[m x k] * B[k x n], row-major with leading dimensions.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc);
/// C[m x n] += A^T * B with A stored k x m and B stored k x n.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
/// C[m x n] += A * B^T with A stored m x k and B stored n x k.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
/// y[i] = exp(x[i]); x and y may alias. The vector path clamps x to [-708, 708].
void exp(const double* x, double* y, std::size_t n);
/// y[i] = tanh(x[i]); x and y may alias.
void tanh(const double* x, double* y, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void exp(const double* x, double* y, std::size_t n);
void tanh(const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define LASTTOK_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc);
void exp(const double* x, double* y, std::size_t n);
void tanh(const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace lasttok::simd
