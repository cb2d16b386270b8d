#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cytocap/autograd.hpp"

namespace cytocap {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::size_t samples_per_tensor = 20;  // clamped to the tensor size
  std::uint64_t seed = 0;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  std::string param_name;
  double max_relative_error = 0.0;
  bool passed = false;
  std::size_t scalars_checked = 0;
};

using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Compares reverse-mode gradients with central differences
// (L(theta + eps) - L(theta - eps)) / 2 eps on sampled scalars of every
// trainable param. 64-bit only. Params are perturbed in place and restored.
std::vector<GradCheckResult> finite_diff_check(std::span<Param<double>* const> params, const LossBuilder& loss,
                                               const GradCheckOptions& options);

}  // namespace cytocap
