#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cytocap/autograd.hpp"
#include "cytocap/vocab.hpp"

namespace cytocap {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 64;
  std::size_t num_blocks = 8;
  std::size_t num_heads = 4;
  std::size_t max_seq_len = 96;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 1234;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

template <typename T>
struct LmBlock {
  Param<T> ln1_g, ln1_b;
  Param<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Param<T> ln2_g, ln2_b;
  Param<T> w1, b1, w2, b2;

  template <typename F>
  void for_each_param(F&& f) {
    for (Param<T>* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2})
      f(*p);
  }
};

// Decoder-only pre-norm transformer: token + learned positional embeddings,
// causal multi-head self-attention and GELU MLP per block, final norm, and an
// untied output head. Linear weights are stored [in, out].
template <typename T>
struct LmWeights {
  LmConfig config;
  Param<T> tok_emb, pos_emb;
  std::vector<LmBlock<T>> blocks;
  Param<T> lnf_g, lnf_b, head;

  template <typename F>
  void for_each_param(F&& f) {
    f(tok_emb);
    f(pos_emb);
    for (auto& b : blocks) b.for_each_param(f);
    f(lnf_g);
    f(lnf_b);
    f(head);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<LmWeights*>(this)->for_each_param([&](Param<T>& p) { f(static_cast<const Param<T>&>(p)); });
  }

  void set_trainable(bool trainable) {
    for_each_param([trainable](Param<T>& p) { p.trainable = trainable; });
  }

  template <typename U>
  LmWeights<U> cast() const;
};

inline constexpr double kLayerNormEps = 1e-5;

// Random init from config.seed; all params frozen (trainable = false).
LmWeights<float> init_lm(const LmConfig& config);

template <typename T>
using BlockHook = std::function<Var<T>(std::size_t block_index, Var<T> hidden)>;

template <typename T>
Var<T> embed_tokens(Tape<T>& tape, const LmWeights<T>& w, std::span<const TokenId> ids);
template <typename T>
Var<T> run_block(Tape<T>& tape, const LmWeights<T>& w, std::size_t block_index, Var<T> h);
template <typename T>
Var<T> output_logits(Tape<T>& tape, const LmWeights<T>& w, Var<T> h);

// Causal logits [len(ids), vocab]. `hook`, when given, runs after every block
// and may replace the hidden state (this is where the adapter plugs in).
// `first_block`/`initial` resume from a cached hidden state.
template <typename T>
Var<T> lm_forward(Tape<T>& tape, const LmWeights<T>& w, std::span<const TokenId> ids,
                  const BlockHook<T>* hook = nullptr);
template <typename T>
Var<T> lm_forward_from(Tape<T>& tape, const LmWeights<T>& w, Var<T> initial, std::size_t first_block,
                       const BlockHook<T>* hook = nullptr);

Tensor<float> lm_forward(std::span<const TokenId> ids, const LmWeights<float>& w);

using LogitsFn = std::function<Tensor<float>(std::span<const TokenId> ids)>;

// Argmax decoding from the last position; stops after emitting EOS, after
// max_new_tokens, or at max_seq_len. Ties go to the lowest token id. Returns
// prompt + generated ids.
std::vector<TokenId> greedy_decode(const LogitsFn& logits, std::vector<TokenId> prompt_ids,
                                   std::size_t max_new_tokens, std::size_t max_seq_len);
std::vector<TokenId> greedy_decode(const LmWeights<float>& w, std::vector<TokenId> prompt_ids,
                                   std::size_t max_new_tokens);

}  // namespace cytocap
