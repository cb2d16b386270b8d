#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// A Tape owns every intermediate value produced during one forward pass. Ops
// take Var handles, compute the value eagerly, and (only when some input
// requires a gradient) record a closure that propagates the output gradient
// back to those inputs. Frozen params never require gradients, so work that
// only depends on frozen weights records nothing.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cytocap/tensor.hpp"

namespace cytocap {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  // References the param's storage; the param must outlive the tape.
  Var<T> param(const Param<T>& p);

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  // Records an op result. `backward` is kept only if any input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  // Gradient accumulator for v (zero-initialized on first access).
  Tensor<T>& grad(Var<T> v);

  // Seeds d(loss)/d(loss) = 1 and runs recorded closures in reverse order.
  void backward(Var<T> loss);

  // Gradients for every trainable param registered on this tape. Params the
  // loss does not depend on map to zero tensors.
  Gradients<T> param_grads() const;
  const Tensor<T>* param_grad(const Param<T>& p) const;

  std::size_t num_nodes() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Param<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, std::uint32_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Tensor-level kernels (no tape). The Var overloads below use these for the
// forward value; tests use them as the reference path.

namespace ops {

// tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Per-row normalization over the last axis, population variance, eps inside the sqrt.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Numerically stable row softmax over the last axis.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

// Multi-head scaled dot-product attention. q: [Lq, d], k/v: [Lk, d]; d split
// evenly across heads. With causal=true, Lq must equal Lk and query i only
// sees keys 0..i.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                    std::size_t num_heads = 1);

// Mean of -log softmax(logits[i])[targets[i]] over positions with mask[i].
// Throws EmptyLossError when no position is selected.
template <typename T>
T masked_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                       std::span<const std::uint8_t> loss_mask);

// C = A * B for 2-D tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// ---------------------------------------------------------------------------
// Differentiable ops.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// x[m,k] * w[k,n] + bias[n]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);
template <typename T>
Var<T> linear(Var<T> x, Var<T> w);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T factor);
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, bool causal, std::size_t num_heads = 1);
// h + tanh(gate) * x, gate a single-element tensor
template <typename T>
Var<T> gated_residual(Var<T> h, Var<T> gate, Var<T> x);
// rows of table[V, d] selected by ids -> [len(ids), d]
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> sum_squares(Var<T> x);
template <typename T>
Var<T> masked_cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                            std::span<const std::uint8_t> loss_mask);

}  // namespace ops
}  // namespace cytocap
