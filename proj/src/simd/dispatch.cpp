#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace cytocap::simd {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(CYTOCAP_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() noexcept {
  if (const char* env = std::getenv("CYTOCAP_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return Isa::scalar;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{&kernels(detect())};
  return table;
}

std::atomic<Isa>& current_isa() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: return cpu_has_avx2();
  }
  return false;
}

std::string_view isa_name(Isa isa) noexcept {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

const KernelTable& kernels(Isa isa) {
  if (isa == Isa::scalar) return scalar_impl::table;
#if defined(CYTOCAP_BUILD_AVX2)
  if (isa == Isa::avx2 && cpu_has_avx2()) return avx2_impl::table;
#endif
  throw std::invalid_argument("SIMD kernels unavailable: " + std::string(isa_name(isa)));
}

Isa active_isa() noexcept { return current_isa().load(); }

void force_isa(Isa isa) {
  current().store(&kernels(isa));
  current_isa().store(isa);
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

}  // namespace cytocap::simd
