#include <cmath>
#include <random>

#include "cytocap/autograd.hpp"
#include "cytocap/gradcheck.hpp"
#include "doctest.h"

using namespace cytocap;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = static_cast<T>(n(rng));
  return t;
}

// Explicit single-head softmax(q k^T / sqrt(d)) v, written independently of ops::attention.
std::vector<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                     bool causal) {
  const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols();
  std::vector<double> out(lq * v.cols(), 0.0);
  for (std::size_t i = 0; i < lq; ++i) {
    std::vector<double> w(lk, 0.0);
    double mx = -1e300;
    const std::size_t vis = causal ? i + 1 : lk;
    for (std::size_t j = 0; j < vis; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
      w[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, w[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < vis; ++j) z += (w[j] = std::exp(w[j] - mx));
    for (std::size_t j = 0; j < vis; ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out[i * v.cols() + c] += w[j] / z * v.at(j, c);
  }
  return out;
}

Param<double> make_param(std::string name, Tensor<double> t, bool trainable = true) {
  return {std::move(name), std::move(t), trainable};
}

void require_grad_ok(std::vector<Param<double>*> params, const LossBuilder& loss, double tol = 1e-6) {
  GradCheckOptions opt;
  opt.samples_per_tensor = 50;
  opt.tolerance = tol;
  for (const auto& r : finite_diff_check(std::span<Param<double>* const>(params), loss, opt)) {
    INFO(r.param_name << " rel err " << r.max_relative_error);
    CHECK(r.passed);
  }
}

}  // namespace

TEST_CASE("gelu") {
  auto y = ops::gelu(Tensor<double>({3}, {0.0, 30.0, 1.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(30.0));
  // scalar closed-form evaluation of the tanh approximation at x = 1
  CHECK(y[2] == doctest::Approx(0.8411919906082768).epsilon(1e-15));
  const double c = std::sqrt(2.0 / M_PI);
  CHECK(y[2] == doctest::Approx(0.5 * (1.0 + std::tanh(c * (1.0 + 0.044715)))).epsilon(1e-15));
  auto yf = ops::gelu(Tensor<float>({2}, {0.0f, 1.0f}));
  CHECK(yf[1] == doctest::Approx(0.8411919906082768).epsilon(1e-6));
}

TEST_CASE("layer_norm") {
  Tensor<double> gamma({4}, 1.0), beta({4}, 0.0);
  SUBCASE("constant row normalizes to zeros") {
    auto y = ops::layer_norm(Tensor<double>({1, 4}, 3.5), gamma, beta, 1e-5);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("random rows match the two-pass reference") {
    std::mt19937_64 rng(5);
    auto x = random_tensor<float>({6, 4}, rng, 3.0);
    auto y = ops::layer_norm(x, gamma.cast<float>(), beta.cast<float>(), 1e-5f);
    for (std::size_t r = 0; r < 6; ++r) {
      double mean = 0, var = 0;
      for (std::size_t c = 0; c < 4; ++c) mean += x.at(r, c);
      mean /= 4;
      for (std::size_t c = 0; c < 4; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
      var /= 4;
      double ymean = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(y.at(r, c) == doctest::Approx((x.at(r, c) - mean) / std::sqrt(var + 1e-5)).epsilon(1e-5));
        ymean += y.at(r, c);
      }
      CHECK(std::abs(ymean / 4) < 1e-6);
    }
  }
  SUBCASE("gamma/beta length mismatch") {
    CHECK_THROWS_AS(ops::layer_norm(Tensor<double>({1, 3}), gamma, beta, 1e-5), ShapeError);
  }
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = ops::softmax_rows(random_tensor<float>({7, 13}, rng, 10.0));
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (float v : p.row(r)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("attention") {
  std::mt19937_64 rng(2);
  SUBCASE("single key/value returns v for any query") {
    auto q = random_tensor<double>({5, 4}, rng);
    Tensor<double> k({1, 4}, {1, 2, 3, 4}), v({1, 4}, {0.5, -1, 2, 7});
    auto o = ops::attention(q, k, v, false);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(o.at(i, c) == doctest::Approx(v.at(0, c)).epsilon(1e-14));
  }
  SUBCASE("causal position 0 attends only to itself") {
    auto q = random_tensor<double>({4, 6}, rng), k = random_tensor<double>({4, 6}, rng);
    auto v = random_tensor<double>({4, 6}, rng);
    auto o = ops::attention(q, k, v, true, 2);
    for (std::size_t c = 0; c < 6; ++c) CHECK(o.at(0, c) == doctest::Approx(v.at(0, c)).epsilon(1e-14));
  }
  SUBCASE("3x3 matches the explicit softmax-matmul oracle") {
    auto q = random_tensor<double>({3, 3}, rng), k = random_tensor<double>({3, 3}, rng);
    auto v = random_tensor<double>({3, 3}, rng);
    for (bool causal : {false, true}) {
      auto o = ops::attention(q, k, v, causal);
      auto ref = attention_oracle(q, k, v, causal);
      for (std::size_t i = 0; i < 9; ++i) CHECK(o[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
  }
  SUBCASE("dimension mismatch is a shape error") {
    CHECK_THROWS_AS(ops::attention(Tensor<double>({2, 4}), Tensor<double>({3, 5}), Tensor<double>({3, 5}), false),
                    ShapeError);
    CHECK_THROWS_AS(ops::attention(Tensor<double>({2, 4}), Tensor<double>({3, 4}), Tensor<double>({3, 4}), true),
                    ShapeError);
  }
}

TEST_CASE("masked_cross_entropy") {
  SUBCASE("uniform logits give ln(V)") {
    Tensor<double> logits({3, 7}, 0.25);
    std::vector<std::int32_t> t{1, 6, 3};
    std::vector<std::uint8_t> m{0, 1, 1};
    CHECK(ops::masked_cross_entropy(logits, std::span<const std::int32_t>(t), std::span<const std::uint8_t>(m)) ==
          doctest::Approx(std::log(7.0)).epsilon(1e-14));
  }
  SUBCASE("targets at masked-out positions do not matter") {
    std::mt19937_64 rng(4);
    auto logits = random_tensor<float>({4, 9}, rng);
    std::vector<std::int32_t> t1{0, 1, 2, 3}, t2{8, 7, 2, 3};
    std::vector<std::uint8_t> m{0, 0, 1, 1};
    const float a = ops::masked_cross_entropy(logits, std::span<const std::int32_t>(t1), std::span<const std::uint8_t>(m));
    const float b = ops::masked_cross_entropy(logits, std::span<const std::int32_t>(t2), std::span<const std::uint8_t>(m));
    CHECK(a == b);
  }
  SUBCASE("2-token case matches per-position -log softmax") {
    Tensor<double> logits({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    std::vector<std::int32_t> t{2, 0};
    std::vector<std::uint8_t> m{1, 1};
    auto nll = [](double a, double b, double c, double pick) {
      return -(pick - std::log(std::exp(a) + std::exp(b) + std::exp(c)));
    };
    const double expected = 0.5 * (nll(1.0, 2.0, 0.5, 0.5) + nll(-1.0, 0.0, 3.0, -1.0));
    CHECK(ops::masked_cross_entropy(logits, std::span<const std::int32_t>(t), std::span<const std::uint8_t>(m)) ==
          doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("all-false mask is an explicit error") {
    Tensor<double> logits({2, 3});
    std::vector<std::int32_t> t{0, 1};
    std::vector<std::uint8_t> m{0, 0};
    CHECK_THROWS_AS(ops::masked_cross_entropy(logits, std::span<const std::int32_t>(t), std::span<const std::uint8_t>(m)),
                    EmptyLossError);
  }
}

TEST_CASE("backward bookkeeping") {
  std::mt19937_64 rng(9);
  auto used = make_param("used", random_tensor<double>({3}, rng));
  auto unused = make_param("unused", random_tensor<double>({3}, rng));
  auto frozen = make_param("frozen", random_tensor<double>({3}, rng), false);

  SUBCASE("loss independent of a param gives a zero gradient; frozen params get no entry") {
    Tape<double> tape;
    tape.param(unused);
    Var<double> l = ops::sum_squares(ops::mul(tape.param(used), tape.param(frozen)));
    tape.backward(l);
    auto g = tape.param_grads();
    REQUIRE(g.contains("unused"));
    for (double v : g.at("unused").values()) CHECK(v == 0.0);
    CHECK_FALSE(g.contains("frozen"));
    CHECK(tape.param_grad(frozen) == nullptr);
    for (std::size_t i = 0; i < 3; ++i) {
      const double f = frozen.value[i];
      CHECK(g.at("used")[i] == doctest::Approx(2 * used.value[i] * f * f));
    }
  }
  SUBCASE("backward before forward is a state error") {
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(Var<double>{&tape, 0}), StateError);
  }
  SUBCASE("no grads are recorded when the tape is in inference mode") {
    Tape<double> tape(false);
    Var<double> l = ops::sum(tape.param(used));
    tape.backward(l);
    CHECK(tape.param_grads().empty());
  }
}

TEST_CASE("finite-difference check") {
  std::mt19937_64 rng(21);
  SUBCASE("linear model with quadratic loss is exact up to roundoff") {
    auto w = make_param("w", random_tensor<double>({4, 3}, rng));
    auto b = make_param("b", random_tensor<double>({3}, rng));
    auto x = random_tensor<double>({5, 4}, rng);
    LossBuilder loss = [&](Tape<double>& t) {
      return ops::sum_squares(ops::linear(t.constant(x), t.param(w), t.param(b)));
    };
    std::vector<Param<double>*> ps{&w, &b};
    GradCheckOptions opt;
    opt.tolerance = 1e-8;
    for (const auto& r : finite_diff_check(std::span<Param<double>* const>(ps), loss, opt)) {
      INFO(r.param_name << " " << r.max_relative_error);
      CHECK(r.passed);
      CHECK(r.max_relative_error < 1e-8);
    }
  }
  SUBCASE("zero epsilon is a precondition error") {
    auto w = make_param("w", random_tensor<double>({2}, rng));
    std::vector<Param<double>*> ps{&w};
    GradCheckOptions opt;
    opt.epsilon = 0.0;
    CHECK_THROWS_AS(finite_diff_check(std::span<Param<double>* const>(ps),
                                      [&](Tape<double>& t) { return ops::sum(t.param(w)); }, opt),
                    PreconditionError);
  }
  SUBCASE("every differentiable op passes") {
    auto a = make_param("a", random_tensor<double>({5, 8}, rng));
    auto wq = make_param("wq", random_tensor<double>({8, 8}, rng, 0.4));
    auto kv = make_param("kv", random_tensor<double>({3, 8}, rng));
    auto gamma = make_param("gamma", random_tensor<double>({8}, rng));
    auto beta = make_param("beta", random_tensor<double>({8}, rng));
    auto gate = make_param("gate", Tensor<double>({1}, {0.3}));
    auto table = make_param("table", random_tensor<double>({6, 8}, rng));
    std::vector<std::int32_t> ids{1, 4, 4, 0, 5};
    std::vector<std::int32_t> tgt{0, 3, 7, 2, 1};
    std::vector<std::uint8_t> mask{0, 1, 1, 0, 1};
    LossBuilder loss = [&](Tape<double>& t) {
      Var<double> x = ops::add(t.param(a), ops::embedding(t.param(table), std::span<const std::int32_t>(ids)));
      Var<double> h = ops::layer_norm(x, t.param(gamma), t.param(beta), 1e-5);
      Var<double> q = ops::matmul(h, t.param(wq));
      Var<double> self = ops::attention(q, h, ops::gelu(h), true, 2);
      Var<double> cross = ops::attention(self, t.param(kv), t.param(kv), false, 4);
      Var<double> y = ops::gated_residual(self, t.param(gate), cross);
      return ops::masked_cross_entropy(ops::scale(y, 2.0), std::span<const std::int32_t>(tgt),
                                       std::span<const std::uint8_t>(mask));
    };
    require_grad_ok({&a, &wq, &kv, &gamma, &beta, &gate, &table}, loss);
  }
}

TEST_CASE("forward determinism") {
  std::mt19937_64 rng(33);
  auto q = random_tensor<float>({6, 8}, rng), k = random_tensor<float>({6, 8}, rng);
  auto o1 = ops::attention(q, k, k, true, 2);
  auto o2 = ops::attention(q, k, k, true, 2);
  CHECK(o1 == o2);
}
