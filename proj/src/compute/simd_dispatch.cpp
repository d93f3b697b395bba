#include <atomic>
#include <cstdlib>
#include <string>

#include "lasttok/compute/simd.hpp"

namespace lasttok::simd {

namespace {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  void (*gemm)(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*, std::size_t,
               double*, std::size_t);
  decltype(gemm) gemm_tn;
  decltype(gemm) gemm_nt;
  void (*exp)(const double*, double*, std::size_t);
  void (*tanh)(const double*, double*, std::size_t);
};

constexpr KernelTable kScalar{&scalar::dot, &scalar::axpy, &scalar::squared_distance, &scalar::gemm, &scalar::gemm_tn, &scalar::gemm_nt, &scalar::exp, &scalar::tanh};
#ifdef LASTTOK_HAVE_AVX2_KERNELS
constexpr KernelTable kAvx2{&avx2::dot, &avx2::axpy, &avx2::squared_distance, &avx2::gemm, &avx2::gemm_tn, &avx2::gemm_nt, &avx2::exp, &avx2::tanh};
#endif

Isa probe() {
#if defined(LASTTOK_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

const KernelTable& table_for(Isa isa) {
#ifdef LASTTOK_HAVE_AVX2_KERNELS
  if (isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

Isa initial_isa() {
  Isa isa = probe();
  if (const char* env = std::getenv("LASTTOK_SIMD")) {
    if (std::string(env) == "scalar") isa = Isa::scalar;
  }
  return isa;
}

std::atomic<const KernelTable*> g_table{&table_for(initial_isa())};
std::atomic<Isa> g_isa{initial_isa()};

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = probe();
  return isa;
}

Isa active_isa() { return g_isa.load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) isa = Isa::scalar;
  g_isa.store(isa, std::memory_order_relaxed);
  g_table.store(&table_for(isa), std::memory_order_relaxed);
}

double dot(const double* a, const double* b, std::size_t n) {
  return g_table.load(std::memory_order_relaxed)->dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  g_table.load(std::memory_order_relaxed)->axpy(alpha, x, y, n);
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  return g_table.load(std::memory_order_relaxed)->squared_distance(a, b, n);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
  g_table.load(std::memory_order_relaxed)->gemm(m, n, k, a, lda, b, ldb, c, ldc);
}


void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  g_table.load(std::memory_order_relaxed)->gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  g_table.load(std::memory_order_relaxed)->gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}

void exp(const double* x, double* y, std::size_t n) { g_table.load(std::memory_order_relaxed)->exp(x, y, n); }

void tanh(const double* x, double* y, std::size_t n) { g_table.load(std::memory_order_relaxed)->tanh(x, y, n); }

}  // namespace lasttok::simd
