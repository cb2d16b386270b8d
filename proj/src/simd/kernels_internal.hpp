#pragma once

#include "cytocap/simd.hpp"

namespace cytocap::simd {

namespace scalar_impl {
extern const KernelTable table;
}

#if defined(CYTOCAP_BUILD_AVX2)
namespace avx2_impl {
extern const KernelTable table;
}
#endif

}  // namespace cytocap::simd
