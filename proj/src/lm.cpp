#include "cytocap/lm.hpp"

#include <cmath>
#include <random>

#include "cytocap/random.hpp"

namespace cytocap {

void LmConfig::validate() const {
  if (vocab_size <= Vocab::kNumSpecials) throw ValidationError("lm: vocab_size must exceed the special tokens");
  if (hidden_dim == 0 || num_blocks == 0 || num_heads == 0 || max_seq_len == 0 || mlp_ratio == 0) {
    throw ValidationError("lm: dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) throw ValidationError("lm: hidden_dim must be divisible by num_heads");
}

namespace {

Param<float> normal_param(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
  return {std::move(name), std::move(t), false};
}

Param<float> const_param(std::string name, Shape shape, float value) {
  return {std::move(name), Tensor<float>(std::move(shape), value), false};
}

template <typename U, typename T>
Param<U> cast_param(const Param<T>& p) {
  return {p.name, p.value.template cast<U>(), p.trainable};
}

}  // namespace

template <typename T>
template <typename U>
LmWeights<U> LmWeights<T>::cast() const {
  LmWeights<U> out;
  out.config = config;
  out.tok_emb = cast_param<U>(tok_emb);
  out.pos_emb = cast_param<U>(pos_emb);
  for (const auto& b : blocks) {
    LmBlock<U> nb;
    auto& src = const_cast<LmBlock<T>&>(b);
    std::vector<Param<U>*> dst;
    nb.for_each_param([&](Param<U>& p) { dst.push_back(&p); });
    std::size_t i = 0;
    src.for_each_param([&](Param<T>& p) { *dst[i++] = cast_param<U>(p); });
    out.blocks.push_back(std::move(nb));
  }
  out.lnf_g = cast_param<U>(lnf_g);
  out.lnf_b = cast_param<U>(lnf_b);
  out.head = cast_param<U>(head);
  return out;
}

template LmWeights<double> LmWeights<float>::cast<double>() const;
template LmWeights<float> LmWeights<double>::cast<float>() const;
template LmWeights<float> LmWeights<float>::cast<float>() const;

LmWeights<float> init_lm(const LmConfig& c) {
  c.validate();
  Rng rng(c.seed);
  const std::size_t d = c.hidden_dim, f = c.hidden_dim * c.mlp_ratio;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  // Residual-branch outputs are scaled down with depth so the stream stays
  // dominated by token and position identity.
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(c.num_blocks));
  LmWeights<float> w;
  w.config = c;
  w.tok_emb = normal_param("lm.tok_emb", {c.vocab_size, d}, 1.0, rng);
  w.pos_emb = normal_param("lm.pos_emb", {c.max_seq_len, d}, 0.5, rng);
  for (std::size_t i = 0; i < c.num_blocks; ++i) {
    const std::string p = "lm.blocks." + std::to_string(i) + ".";
    LmBlock<float> b;
    b.ln1_g = const_param(p + "ln1.gamma", {d}, 1.0f);
    b.ln1_b = const_param(p + "ln1.beta", {d}, 0.0f);
    b.wq = normal_param(p + "attn.wq", {d, d}, in_std, rng);
    b.bq = const_param(p + "attn.bq", {d}, 0.0f);
    b.wk = normal_param(p + "attn.wk", {d, d}, in_std, rng);
    b.bk = const_param(p + "attn.bk", {d}, 0.0f);
    b.wv = normal_param(p + "attn.wv", {d, d}, in_std, rng);
    b.bv = const_param(p + "attn.bv", {d}, 0.0f);
    b.wo = normal_param(p + "attn.wo", {d, d}, out_std, rng);
    b.bo = const_param(p + "attn.bo", {d}, 0.0f);
    b.ln2_g = const_param(p + "ln2.gamma", {d}, 1.0f);
    b.ln2_b = const_param(p + "ln2.beta", {d}, 0.0f);
    b.w1 = normal_param(p + "mlp.w1", {d, f}, in_std, rng);
    b.b1 = const_param(p + "mlp.b1", {f}, 0.0f);
    b.w2 = normal_param(p + "mlp.w2", {f, d}, out_std / std::sqrt(static_cast<double>(c.mlp_ratio)), rng);
    b.b2 = const_param(p + "mlp.b2", {d}, 0.0f);
    w.blocks.push_back(std::move(b));
  }
  w.lnf_g = const_param("lm.lnf.gamma", {d}, 1.0f);
  w.lnf_b = const_param("lm.lnf.beta", {d}, 0.0f);
  w.head = normal_param("lm.head", {d, c.vocab_size}, in_std, rng);
  return w;
}

template <typename T>
Var<T> embed_tokens(Tape<T>& tape, const LmWeights<T>& w, std::span<const TokenId> ids) {
  if (ids.empty()) throw PreconditionError("lm_forward: empty token sequence");
  if (ids.size() > w.config.max_seq_len) {
    throw PreconditionError("lm_forward: sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                            std::to_string(w.config.max_seq_len));
  }
  std::vector<TokenId> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<TokenId>(i);
  Var<T> tok = ops::embedding(tape.param(w.tok_emb), ids);
  Var<T> pos = ops::embedding(tape.param(w.pos_emb), std::span<const TokenId>(positions));
  return ops::add(tok, pos);
}

template <typename T>
Var<T> run_block(Tape<T>& tape, const LmWeights<T>& w, std::size_t block_index, Var<T> h) {
  const LmBlock<T>& b = w.blocks.at(block_index);
  const T eps = static_cast<T>(kLayerNormEps);
  Var<T> x = ops::layer_norm(h, tape.param(b.ln1_g), tape.param(b.ln1_b), eps);
  Var<T> q = ops::linear(x, tape.param(b.wq), tape.param(b.bq));
  Var<T> k = ops::linear(x, tape.param(b.wk), tape.param(b.bk));
  Var<T> v = ops::linear(x, tape.param(b.wv), tape.param(b.bv));
  Var<T> a = ops::attention(q, k, v, true, w.config.num_heads);
  h = ops::add(h, ops::linear(a, tape.param(b.wo), tape.param(b.bo)));
  x = ops::layer_norm(h, tape.param(b.ln2_g), tape.param(b.ln2_b), eps);
  Var<T> m = ops::gelu(ops::linear(x, tape.param(b.w1), tape.param(b.b1)));
  return ops::add(h, ops::linear(m, tape.param(b.w2), tape.param(b.b2)));
}

template <typename T>
Var<T> output_logits(Tape<T>& tape, const LmWeights<T>& w, Var<T> h) {
  Var<T> x = ops::layer_norm(h, tape.param(w.lnf_g), tape.param(w.lnf_b), static_cast<T>(kLayerNormEps));
  return ops::linear(x, tape.param(w.head));
}

template <typename T>
Var<T> lm_forward_from(Tape<T>& tape, const LmWeights<T>& w, Var<T> h, std::size_t first_block,
                       const BlockHook<T>* hook) {
  for (std::size_t i = first_block; i < w.blocks.size(); ++i) {
    h = run_block(tape, w, i, h);
    if (hook && *hook) h = (*hook)(i, h);
  }
  return output_logits(tape, w, h);
}

template <typename T>
Var<T> lm_forward(Tape<T>& tape, const LmWeights<T>& w, std::span<const TokenId> ids, const BlockHook<T>* hook) {
  return lm_forward_from(tape, w, embed_tokens(tape, w, ids), 0, hook);
}

#define CYTOCAP_INSTANTIATE_LM(T)                                                                        \
  template Var<T> embed_tokens(Tape<T>&, const LmWeights<T>&, std::span<const TokenId>);                 \
  template Var<T> run_block(Tape<T>&, const LmWeights<T>&, std::size_t, Var<T>);                         \
  template Var<T> output_logits(Tape<T>&, const LmWeights<T>&, Var<T>);                                  \
  template Var<T> lm_forward_from(Tape<T>&, const LmWeights<T>&, Var<T>, std::size_t, const BlockHook<T>*); \
  template Var<T> lm_forward(Tape<T>&, const LmWeights<T>&, std::span<const TokenId>, const BlockHook<T>*);

CYTOCAP_INSTANTIATE_LM(float)
CYTOCAP_INSTANTIATE_LM(double)

Tensor<float> lm_forward(std::span<const TokenId> ids, const LmWeights<float>& w) {
  Tape<float> tape(false);
  return lm_forward(tape, w, ids).value();
}

std::vector<TokenId> greedy_decode(const LogitsFn& logits_fn, std::vector<TokenId> ids, std::size_t max_new_tokens,
                                   std::size_t max_seq_len) {
  if (ids.empty()) throw PreconditionError("greedy_decode: prompt must be nonempty");
  for (std::size_t step = 0; step < max_new_tokens && ids.size() < max_seq_len; ++step) {
    const Tensor<float> logits = logits_fn(ids);
    const auto last = logits.row(logits.rows() - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < last.size(); ++j) {
      if (last[j] > last[best]) best = j;
    }
    ids.push_back(static_cast<TokenId>(best));
    if (static_cast<TokenId>(best) == Vocab::kEos) break;
  }
  return ids;
}

std::vector<TokenId> greedy_decode(const LmWeights<float>& w, std::vector<TokenId> prompt_ids,
                                   std::size_t max_new_tokens) {
  return greedy_decode([&w](std::span<const TokenId> ids) { return lm_forward(ids, w); }, std::move(prompt_ids),
                       max_new_tokens, w.config.max_seq_len);
}

}  // namespace cytocap
