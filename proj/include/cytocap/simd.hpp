#pragma once

// Data-parallel inner loops used by the tensor ops. Every kernel exists as a
// portable scalar reference and, on x86-64, an AVX2+FMA variant. The variant
// is picked once per process from CPUID (override with CYTOCAP_SIMD=scalar).

#include <cstddef>
#include <string_view>

namespace cytocap::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  // C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n]; all row-major.
  void (*gemm_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                   const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
  void (*gemm_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                   const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

bool isa_available(Isa isa) noexcept;
std::string_view isa_name(Isa isa) noexcept;

// Kernel table for a specific ISA; throws std::invalid_argument if the ISA
// was not compiled in or the CPU lacks it.
const KernelTable& kernels(Isa isa);

// Process-wide selection. Fixed after the first call unless force_isa is used
// (tests only; not thread-safe against concurrent kernel calls).
Isa active_isa() noexcept;
void force_isa(Isa isa);
const KernelTable& active() noexcept;

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  active().gemm_f32(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  active().gemm_f64(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
inline float dot(const float* a, const float* b, std::size_t n) { return active().dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot_f64(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy_f32(alpha, x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy_f64(alpha, x, y, n); }

}  // namespace cytocap::simd
