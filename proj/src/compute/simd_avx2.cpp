// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include "lasttok/compute/simd.hpp"

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace lasttok::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

// R rows of C, eight columns at a time held in registers across the k loop.
// Element (r, p) of A sits at a[r * rs + p * cs], so the same kernel serves
// A and A^T.
template <int R>
void gemm_rows(std::size_t n, std::size_t k, const double* a, std::size_t rs, std::size_t cs, const double* b,
               std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc[R][2];
    for (int r = 0; r < R; ++r) {
      acc[r][0] = _mm256_loadu_pd(c + r * ldc + j);
      acc[r][1] = _mm256_loadu_pd(c + r * ldc + j + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
      for (int r = 0; r < R; ++r) {
        const __m256d ar = _mm256_broadcast_sd(a + r * rs + p * cs);
        acc[r][0] = _mm256_fmadd_pd(ar, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(ar, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_pd(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_pd(c + r * ldc + j + 4, acc[r][1]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      for (int r = 0; r < R; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * rs + p * cs), b0, acc[r]);
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double s = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) s += a[r * rs + p * cs] * b[p * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs, std::size_t cs,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(n, k, a + i * rs, rs, cs, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) gemm_rows<1>(n, k, a + i * rs, rs, cs, b, ldb, c + i * ldc, ldc);
}

// out[k x n] = B^T for B stored n x k, in 4x4 register tiles.
void pack_transposed(std::size_t n, std::size_t k, const double* b, std::size_t ldb, double* out) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + j * ldb;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const __m256d r0 = _mm256_loadu_pd(b0 + p);
      const __m256d r1 = _mm256_loadu_pd(b0 + ldb + p);
      const __m256d r2 = _mm256_loadu_pd(b0 + 2 * ldb + p);
      const __m256d r3 = _mm256_loadu_pd(b0 + 3 * ldb + p);
      const __m256d t0 = _mm256_unpacklo_pd(r0, r1), t1 = _mm256_unpackhi_pd(r0, r1);
      const __m256d t2 = _mm256_unpacklo_pd(r2, r3), t3 = _mm256_unpackhi_pd(r2, r3);
      _mm256_storeu_pd(out + p * n + j, _mm256_permute2f128_pd(t0, t2, 0x20));
      _mm256_storeu_pd(out + (p + 1) * n + j, _mm256_permute2f128_pd(t1, t3, 0x20));
      _mm256_storeu_pd(out + (p + 2) * n + j, _mm256_permute2f128_pd(t0, t2, 0x31));
      _mm256_storeu_pd(out + (p + 3) * n + j, _mm256_permute2f128_pd(t1, t3, 0x31));
    }
    for (; p < k; ++p)
      for (std::size_t q = 0; q < 4; ++q) out[p * n + j + q] = b0[q * ldb + p];
  }
  for (; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) out[p * n + j] = b[j * ldb + p];
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  // Packing B^T once and running the broadcast kernel beats dot-product
  // blocking at these sizes, where horizontal sums dominate.
  thread_local std::vector<double> packed;
  packed.resize(n * k);
  pack_transposed(n, k, b, ldb, packed.data());
  gemm_strided(m, n, k, a, lda, 1, packed.data(), n, c, ldc);
}

namespace {

// Cephes-style exp: n = round(x / ln 2), r = x - n ln 2 in two parts, a
// rational approximation on r, then scaling by 2^n through the exponent bits.
inline __m256d exp4(__m256d x) {
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(-708.0)), _mm256_set1_pd(708.0));
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93145751953125e-1), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.42860682030941723212e-6), r);
  const __m256d rr = _mm256_mul_pd(r, r);
  __m256d p = _mm256_set1_pd(1.26177193074810590878e-4);
  p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(3.02994407707441961300e-2));
  p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(9.99999999999999999910e-1));
  p = _mm256_mul_pd(p, r);
  __m256d q = _mm256_set1_pd(3.00198505138664455042e-6);
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.52448340349684104192e-3));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.27265548208155028766e-1));
  q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.00000000000000000009e0));
  const __m256d e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), _mm256_div_pd(p, _mm256_sub_pd(q, p)), _mm256_set1_pd(1.0));
  // n is integral and small, so adding 1.5 * 2^52 leaves it in the low mantissa bits.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)), _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(bits));
}

}  // namespace

void exp(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp4(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

// tanh(z) = 1 - 2 / (exp(2z) + 1); |z| is capped at 20, where tanh rounds to +-1.
void tanh(const double* x, double* y, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0), two = _mm256_set1_pd(2.0), cap = _mm256_set1_pd(20.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d z = _mm256_loadu_pd(x + i);
    z = _mm256_min_pd(_mm256_max_pd(z, _mm256_sub_pd(_mm256_setzero_pd(), cap)), cap);
    const __m256d e = exp4(_mm256_mul_pd(two, z));
    _mm256_storeu_pd(y + i, _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(e, one))));
  }
  for (; i < n; ++i) y[i] = std::tanh(x[i]);
}

}  // namespace lasttok::simd::avx2
