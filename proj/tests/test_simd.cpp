#include <random>
#include <vector>

#include "cytocap/simd.hpp"
#include "doctest.h"

using namespace cytocap;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

bool have_avx2() { return simd::isa_available(simd::Isa::avx2); }

}  // namespace

TEST_CASE("scalar table is always available and matches a naive triple loop") {
  const auto& k = simd::kernels(simd::Isa::scalar);
  std::mt19937_64 rng(1);
  const std::size_t m = 5, n = 7, p = 3;
  auto a = random_vec<double>(m * p, rng), b = random_vec<double>(p * n, rng);
  std::vector<double> c(m * n, 0.0);
  k.gemm_f64(m, n, p, a.data(), p, b.data(), n, c.data(), n, false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < p; ++q) s += a[i * p + q] * b[q * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("avx2 gemm matches scalar reference across tile remainders") {
  if (!have_avx2()) return;
  const auto& s = simd::kernels(simd::Isa::scalar);
  const auto& v = simd::kernels(simd::Isa::avx2);
  std::mt19937_64 rng(7);
  for (std::size_t m : {1u, 3u, 4u, 5u, 9u}) {
    for (std::size_t n : {1u, 7u, 8u, 15u, 16u, 17u, 40u}) {
      for (std::size_t k : {1u, 2u, 33u}) {
        for (bool acc : {false, true}) {
          auto a = random_vec<float>(m * k, rng), b = random_vec<float>(k * n, rng);
          auto c0 = random_vec<float>(m * n, rng);
          auto c1 = c0;
          s.gemm_f32(m, n, k, a.data(), k, b.data(), n, c0.data(), n, acc);
          v.gemm_f32(m, n, k, a.data(), k, b.data(), n, c1.data(), n, acc);
          for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c0[i]).epsilon(1e-5));

          auto ad = random_vec<double>(m * k, rng), bd = random_vec<double>(k * n, rng);
          auto d0 = random_vec<double>(m * n, rng);
          auto d1 = d0;
          s.gemm_f64(m, n, k, ad.data(), k, bd.data(), n, d0.data(), n, acc);
          v.gemm_f64(m, n, k, ad.data(), k, bd.data(), n, d1.data(), n, acc);
          for (std::size_t i = 0; i < m * n; ++i) CHECK(d1[i] == doctest::Approx(d0[i]).epsilon(1e-13));
        }
      }
    }
  }
}

TEST_CASE("avx2 dot and axpy match scalar reference") {
  if (!have_avx2()) return;
  const auto& s = simd::kernels(simd::Isa::scalar);
  const auto& v = simd::kernels(simd::Isa::avx2);
  std::mt19937_64 rng(3);
  for (std::size_t n : {0u, 1u, 7u, 8u, 16u, 31u, 128u, 513u}) {
    auto a = random_vec<float>(n, rng), b = random_vec<float>(n, rng);
    CHECK(v.dot_f32(a.data(), b.data(), n) == doctest::Approx(s.dot_f32(a.data(), b.data(), n)).epsilon(1e-5));
    auto ad = random_vec<double>(n, rng), bd = random_vec<double>(n, rng);
    CHECK(v.dot_f64(ad.data(), bd.data(), n) == doctest::Approx(s.dot_f64(ad.data(), bd.data(), n)).epsilon(1e-13));
    auto y0 = b, y1 = b;
    s.axpy_f32(0.37f, a.data(), y0.data(), n);
    v.axpy_f32(0.37f, a.data(), y1.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y0[i]).epsilon(1e-6));
  }
}

TEST_CASE("forcing the scalar ISA switches the active table") {
  const simd::Isa before = simd::active_isa();
  simd::force_isa(simd::Isa::scalar);
  CHECK(simd::active_isa() == simd::Isa::scalar);
  CHECK(&simd::active() == &simd::kernels(simd::Isa::scalar));
  simd::force_isa(before);
  CHECK(simd::active_isa() == before);
}
