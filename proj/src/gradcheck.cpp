#include "cytocap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cytocap/random.hpp"

namespace cytocap {

std::vector<GradCheckResult> finite_diff_check(std::span<Param<double>* const> params, const LossBuilder& loss,
                                               const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw PreconditionError("finite_diff_check: epsilon must be positive");
  if (!(options.tolerance > 0.0)) throw PreconditionError("finite_diff_check: tolerance must be positive");

  Gradients<double> analytic;
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    tape.backward(l);
    analytic = tape.param_grads();
  }

  auto eval = [&]() {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };

  std::vector<GradCheckResult> results;
  Rng rng(options.seed);
  for (Param<double>* p : params) {
    if (!p->trainable) continue;
    GradCheckResult r{p->name, 0.0, true, 0};
    const auto it = analytic.find(p->name);
    const Tensor<double> zeros(p->value.shape());
    const Tensor<double>& grad = it == analytic.end() ? zeros : it->second;
    for (std::size_t idx : sample_indices(rng, p->value.size(), options.samples_per_tensor)) {
      const double saved = p->value[idx];
      p->value[idx] = saved + options.epsilon;
      const double up = eval();
      p->value[idx] = saved - options.epsilon;
      const double down = eval();
      p->value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = grad[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      r.max_relative_error = std::max(r.max_relative_error, std::abs(a - numeric) / denom);
      ++r.scalars_checked;
    }
    r.passed = r.max_relative_error <= options.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace cytocap
