#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cytocap/gradcheck.hpp"
#include "cytocap/lm.hpp"

namespace cytocap {

struct AdapterConfig {
  std::size_t embedding_dim = 64;
  std::size_t num_vision_tokens = 4;
  std::size_t insert_every = 4;
  std::size_t proj_hidden_dim = 256;
  std::size_t num_heads = 1;
  std::size_t ffn_mult = 4;
  double gate_init = 0.0;
  std::uint64_t seed = 99;

  void validate(const LmConfig& lm) const;
  std::size_t num_insertions(const LmConfig& lm) const { return lm.num_blocks / insert_every; }
  bool operator==(const AdapterConfig&) const = default;
};

// Pre-norm cross-attention and pre-norm feed-forward, each added back through
// its own tanh gate: h += tanh(gate) * XAttn(LN(h), vision); h += tanh(ffn_gate) * FFN(LN(h)).
template <typename T>
struct XAttnBlock {
  Param<T> ln_q_g, ln_q_b;
  Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Param<T> gate;
  Param<T> ln_f_g, ln_f_b;
  Param<T> w1, b1, w2, b2;
  Param<T> ffn_gate;

  template <typename F>
  void for_each_param(F&& f) {
    for (Param<T>* p : {&ln_q_g, &ln_q_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &gate, &ln_f_g, &ln_f_b, &w1, &b1,
                        &w2, &b2, &ffn_gate})
      f(*p);
  }
};

// The only trainable parameters: embedding -> vision-token projection
// (linear, GELU, linear) and one gated cross-attention block per insertion point.
template <typename T>
struct AdapterWeights {
  AdapterConfig config;
  std::size_t hidden_dim = 0;
  Param<T> proj_w1, proj_b1, proj_w2, proj_b2;
  std::vector<XAttnBlock<T>> xattn;

  template <typename F>
  void for_each_param(F&& f) {
    for (Param<T>* p : {&proj_w1, &proj_b1, &proj_w2, &proj_b2}) f(*p);
    for (auto& b : xattn) b.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<AdapterWeights*>(this)->for_each_param([&](Param<T>& p) { f(static_cast<const Param<T>&>(p)); });
  }
  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for_each_param([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }

  template <typename U>
  AdapterWeights<U> cast() const;
};

AdapterWeights<float> init_adapter(const AdapterConfig& config, const LmConfig& lm);

// Closed-form trainable scalar count for a configuration.
std::size_t adapter_param_count(const AdapterConfig& config, const LmConfig& lm);

// [num_vision_tokens, hidden_dim] from one embedding vector (reshape of a
// single num_vision_tokens * hidden_dim projection).
template <typename T>
Var<T> project(Tape<T>& tape, const AdapterWeights<T>& w, std::span<const T> embedding);
Tensor<float> project(std::span<const float> embedding, const AdapterWeights<float>& w);

template <typename T>
Var<T> xattn_block(Tape<T>& tape, const XAttnBlock<T>& b, Var<T> h, Var<T> vision, std::size_t num_heads);

// lm_forward with an adapter block after every insert_every-th LM block.
template <typename T>
Var<T> conditioned_forward(Tape<T>& tape, std::span<const TokenId> ids, Var<T> vision, const LmWeights<T>& lm,
                           const AdapterWeights<T>& adapter);
template <typename T>
Var<T> conditioned_forward_from(Tape<T>& tape, Var<T> hidden, std::size_t first_block, Var<T> vision,
                                const LmWeights<T>& lm, const AdapterWeights<T>& adapter);
Tensor<float> conditioned_forward(std::span<const TokenId> ids, const Tensor<float>& vision_tokens,
                                  const LmWeights<float>& lm, const AdapterWeights<float>& adapter);

// Hidden state after the first insert_every LM blocks, which no adapter
// block precedes; training caches it per sequence.
Tensor<float> frozen_prefix(std::span<const TokenId> ids, const LmWeights<float>& lm, std::size_t insert_every);
// conditioned_forward resumed from a frozen_prefix result.
template <typename T>
Var<T> conditioned_forward_cached(Tape<T>& tape, Var<T> prefix_hidden, Var<T> vision, const LmWeights<T>& lm,
                                  const AdapterWeights<T>& adapter);

struct NamedParam {
  std::string name;
  Shape shape;
};
// The trainable parameter list (adapter only). Throws StateError if any LM
// param is marked trainable.
std::vector<NamedParam> trainable_params(const LmWeights<float>& lm, const AdapterWeights<float>& adapter);

// One tokenized training sequence: the model reads `input` and is scored on
// `target` where `mask` is set (caption tokens only).
struct SequenceExample {
  std::string id;
  std::vector<float> embedding;
  std::vector<TokenId> input;
  std::vector<TokenId> target;
  std::vector<std::uint8_t> mask;
};

// Masked cross-entropy of one example; `prefix` optionally supplies its
// frozen_prefix hidden state.
template <typename T>
Var<T> example_loss(Tape<T>& tape, const LmWeights<T>& lm, const AdapterWeights<T>& adapter,
                    const SequenceExample& ex, const Tensor<float>* prefix = nullptr);

// Finite-difference check of every adapter tensor on the mean loss of a batch
// (64-bit copies of the weights).
std::vector<GradCheckResult> adapter_grad_check(const LmWeights<float>& lm, const AdapterWeights<float>& adapter,
                                                std::span<const SequenceExample> batch,
                                                const GradCheckOptions& options);

}  // namespace cytocap
