#include "cytocap/adapter.hpp"

#include <cmath>
#include <random>

#include "cytocap/random.hpp"

namespace cytocap {

void AdapterConfig::validate(const LmConfig& lm) const {
  if (num_vision_tokens < 1) throw ValidationError("adapter: num_vision_tokens must be >= 1");
  if (insert_every == 0 || lm.num_blocks % insert_every != 0) {
    throw ValidationError("adapter: insert_every must divide the LM block count");
  }
  if (embedding_dim == 0 || proj_hidden_dim == 0 || ffn_mult == 0) throw ValidationError("adapter: zero dimension");
  if (num_heads == 0 || lm.hidden_dim % num_heads != 0) {
    throw ValidationError("adapter: hidden_dim must be divisible by num_heads");
  }
}

namespace {

Param<float> normal_param(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
  return {std::move(name), std::move(t), true};
}

Param<float> const_param(std::string name, Shape shape, float value) {
  return {std::move(name), Tensor<float>(std::move(shape), value), true};
}

template <typename U, typename T>
Param<U> cast_param(const Param<T>& p) {
  return {p.name, p.value.template cast<U>(), p.trainable};
}

}  // namespace

template <typename T>
template <typename U>
AdapterWeights<U> AdapterWeights<T>::cast() const {
  AdapterWeights<U> out;
  out.config = config;
  out.hidden_dim = hidden_dim;
  out.proj_w1 = cast_param<U>(proj_w1);
  out.proj_b1 = cast_param<U>(proj_b1);
  out.proj_w2 = cast_param<U>(proj_w2);
  out.proj_b2 = cast_param<U>(proj_b2);
  for (const auto& b : xattn) {
    XAttnBlock<U> nb;
    std::vector<Param<U>*> dst;
    nb.for_each_param([&](Param<U>& p) { dst.push_back(&p); });
    std::size_t i = 0;
    const_cast<XAttnBlock<T>&>(b).for_each_param([&](Param<T>& p) { *dst[i++] = cast_param<U>(p); });
    out.xattn.push_back(std::move(nb));
  }
  return out;
}

template AdapterWeights<double> AdapterWeights<float>::cast<double>() const;
template AdapterWeights<float> AdapterWeights<double>::cast<float>() const;
template AdapterWeights<float> AdapterWeights<float>::cast<float>() const;

AdapterWeights<float> init_adapter(const AdapterConfig& c, const LmConfig& lm) {
  c.validate(lm);
  Rng rng(c.seed);
  const std::size_t d = lm.hidden_dim, f = lm.hidden_dim * c.ffn_mult;
  const double d_std = 1.0 / std::sqrt(static_cast<double>(d));
  AdapterWeights<float> w;
  w.config = c;
  w.hidden_dim = d;
  w.proj_w1 = normal_param("adapter.proj.w1", {c.embedding_dim, c.proj_hidden_dim},
                           1.0 / std::sqrt(static_cast<double>(c.embedding_dim)), rng);
  w.proj_b1 = const_param("adapter.proj.b1", {c.proj_hidden_dim}, 0.0f);
  w.proj_w2 = normal_param("adapter.proj.w2", {c.proj_hidden_dim, c.num_vision_tokens * d},
                           1.0 / std::sqrt(static_cast<double>(c.proj_hidden_dim)), rng);
  w.proj_b2 = const_param("adapter.proj.b2", {c.num_vision_tokens * d}, 0.0f);
  const auto gate = static_cast<float>(c.gate_init);
  for (std::size_t i = 0; i < c.num_insertions(lm); ++i) {
    const std::string p = "adapter.xattn." + std::to_string(i) + ".";
    XAttnBlock<float> b;
    b.ln_q_g = const_param(p + "ln_q.gamma", {d}, 1.0f);
    b.ln_q_b = const_param(p + "ln_q.beta", {d}, 0.0f);
    b.wq = normal_param(p + "wq", {d, d}, d_std, rng);
    b.bq = const_param(p + "bq", {d}, 0.0f);
    b.wk = normal_param(p + "wk", {d, d}, d_std, rng);
    b.bk = const_param(p + "bk", {d}, 0.0f);
    b.wv = normal_param(p + "wv", {d, d}, d_std, rng);
    b.bv = const_param(p + "bv", {d}, 0.0f);
    b.wo = normal_param(p + "wo", {d, d}, d_std, rng);
    b.bo = const_param(p + "bo", {d}, 0.0f);
    b.gate = const_param(p + "gate", {1}, gate);
    b.ln_f_g = const_param(p + "ln_ffn.gamma", {d}, 1.0f);
    b.ln_f_b = const_param(p + "ln_ffn.beta", {d}, 0.0f);
    b.w1 = normal_param(p + "ffn.w1", {d, f}, d_std, rng);
    b.b1 = const_param(p + "ffn.b1", {f}, 0.0f);
    b.w2 = normal_param(p + "ffn.w2", {f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng);
    b.b2 = const_param(p + "ffn.b2", {d}, 0.0f);
    b.ffn_gate = const_param(p + "ffn_gate", {1}, gate);
    w.xattn.push_back(std::move(b));
  }
  return w;
}

std::size_t adapter_param_count(const AdapterConfig& c, const LmConfig& lm) {
  const std::size_t d = lm.hidden_dim, f = d * c.ffn_mult, p = c.proj_hidden_dim, t = c.num_vision_tokens;
  const std::size_t projection = c.embedding_dim * p + p + p * t * d + t * d;
  const std::size_t block = 2 * d + 4 * (d * d + d) + 1 + 2 * d + (d * f + f) + (f * d + d) + 1;
  return projection + c.num_insertions(lm) * block;
}

template <typename T>
Var<T> project(Tape<T>& tape, const AdapterWeights<T>& w, std::span<const T> embedding) {
  if (embedding.size() != w.config.embedding_dim) {
    throw ShapeError("project: embedding dim " + std::to_string(embedding.size()) + " != " +
                     std::to_string(w.config.embedding_dim));
  }
  Var<T> x = tape.constant(Tensor<T>({1, embedding.size()}, std::vector<T>(embedding.begin(), embedding.end())));
  Var<T> hdn = ops::gelu(ops::linear(x, tape.param(w.proj_w1), tape.param(w.proj_b1)));
  Var<T> out = ops::linear(hdn, tape.param(w.proj_w2), tape.param(w.proj_b2));
  return ops::reshape(out, {w.config.num_vision_tokens, w.hidden_dim});
}

Tensor<float> project(std::span<const float> embedding, const AdapterWeights<float>& w) {
  Tape<float> tape(false);
  return project(tape, w, embedding).value();
}

template <typename T>
Var<T> xattn_block(Tape<T>& tape, const XAttnBlock<T>& b, Var<T> h, Var<T> vision, std::size_t num_heads) {
  const T eps = static_cast<T>(kLayerNormEps);
  Var<T> x = ops::layer_norm(h, tape.param(b.ln_q_g), tape.param(b.ln_q_b), eps);
  Var<T> q = ops::linear(x, tape.param(b.wq), tape.param(b.bq));
  Var<T> k = ops::linear(vision, tape.param(b.wk), tape.param(b.bk));
  Var<T> v = ops::linear(vision, tape.param(b.wv), tape.param(b.bv));
  Var<T> a = ops::linear(ops::attention(q, k, v, false, num_heads), tape.param(b.wo), tape.param(b.bo));
  h = ops::gated_residual(h, tape.param(b.gate), a);
  x = ops::layer_norm(h, tape.param(b.ln_f_g), tape.param(b.ln_f_b), eps);
  Var<T> m = ops::linear(ops::gelu(ops::linear(x, tape.param(b.w1), tape.param(b.b1))), tape.param(b.w2),
                         tape.param(b.b2));
  return ops::gated_residual(h, tape.param(b.ffn_gate), m);
}

template <typename T>
Var<T> conditioned_forward_from(Tape<T>& tape, Var<T> hidden, std::size_t first_block, Var<T> vision,
                                const LmWeights<T>& lm, const AdapterWeights<T>& adapter) {
  const std::size_t every = adapter.config.insert_every;
  const std::size_t heads = adapter.config.num_heads;
  BlockHook<T> hook = [&](std::size_t block, Var<T> h) {
    if ((block + 1) % every != 0) return h;
    return xattn_block(tape, adapter.xattn.at((block + 1) / every - 1), h, vision, heads);
  };
  return lm_forward_from(tape, lm, hidden, first_block, &hook);
}

template <typename T>
Var<T> conditioned_forward(Tape<T>& tape, std::span<const TokenId> ids, Var<T> vision, const LmWeights<T>& lm,
                           const AdapterWeights<T>& adapter) {
  if (adapter.hidden_dim != lm.config.hidden_dim || adapter.xattn.size() != adapter.config.num_insertions(lm.config)) {
    throw ShapeError("conditioned_forward: adapter does not match the language model");
  }
  if (vision.value().rank() != 2 || vision.value().cols() != lm.config.hidden_dim) {
    throw ShapeError("conditioned_forward: vision tokens must be [n, hidden_dim]");
  }
  return conditioned_forward_from(tape, embed_tokens(tape, lm, ids), 0, vision, lm, adapter);
}

Tensor<float> conditioned_forward(std::span<const TokenId> ids, const Tensor<float>& vision_tokens,
                                  const LmWeights<float>& lm, const AdapterWeights<float>& adapter) {
  Tape<float> tape(false);
  return conditioned_forward(tape, ids, tape.constant(vision_tokens), lm, adapter).value();
}

Tensor<float> frozen_prefix(std::span<const TokenId> ids, const LmWeights<float>& lm, std::size_t insert_every) {
  if (insert_every == 0 || insert_every > lm.config.num_blocks) throw PreconditionError("invalid insertion stride");
  Tape<float> tape(false);
  Var<float> h = embed_tokens(tape, lm, ids);
  for (std::size_t b = 0; b < insert_every; ++b) h = run_block(tape, lm, b, h);
  return h.value();
}

template <typename T>
Var<T> conditioned_forward_cached(Tape<T>& tape, Var<T> prefix_hidden, Var<T> vision, const LmWeights<T>& lm,
                                  const AdapterWeights<T>& adapter) {
  const std::size_t every = adapter.config.insert_every;
  Var<T> h = xattn_block(tape, adapter.xattn.at(0), prefix_hidden, vision, adapter.config.num_heads);
  return conditioned_forward_from(tape, h, every, vision, lm, adapter);
}

std::vector<NamedParam> trainable_params(const LmWeights<float>& lm, const AdapterWeights<float>& adapter) {
  lm.for_each_param([](const Param<float>& p) {
    if (p.trainable) throw StateError("language-model param marked trainable: " + p.name);
  });
  std::vector<NamedParam> out;
  const_cast<AdapterWeights<float>&>(adapter).for_each_param([&](Param<float>& p) {
    if (p.trainable) out.push_back({p.name, p.value.shape()});
  });
  return out;
}

template <typename T>
Var<T> example_loss(Tape<T>& tape, const LmWeights<T>& lm, const AdapterWeights<T>& adapter,
                    const SequenceExample& ex, const Tensor<float>* prefix) {
  std::vector<T> emb(ex.embedding.begin(), ex.embedding.end());
  Var<T> vision = project(tape, adapter, std::span<const T>(emb));
  Var<T> logits = prefix ? conditioned_forward_cached(tape, tape.constant(prefix->template cast<T>()), vision, lm, adapter)
                         : conditioned_forward(tape, std::span<const TokenId>(ex.input), vision, lm, adapter);
  return ops::masked_cross_entropy(logits, std::span<const TokenId>(ex.target), std::span<const std::uint8_t>(ex.mask));
}

#define CYTOCAP_INSTANTIATE_ADAPTER(T)                                                                           \
  template Var<T> project(Tape<T>&, const AdapterWeights<T>&, std::span<const T>);                               \
  template Var<T> xattn_block(Tape<T>&, const XAttnBlock<T>&, Var<T>, Var<T>, std::size_t);                      \
  template Var<T> conditioned_forward(Tape<T>&, std::span<const TokenId>, Var<T>, const LmWeights<T>&,           \
                                      const AdapterWeights<T>&);                                                 \
  template Var<T> conditioned_forward_from(Tape<T>&, Var<T>, std::size_t, Var<T>, const LmWeights<T>&,           \
                                           const AdapterWeights<T>&);                                            \
  template Var<T> conditioned_forward_cached(Tape<T>&, Var<T>, Var<T>, const LmWeights<T>&,                     \
                                             const AdapterWeights<T>&);                                          \
  template Var<T> example_loss(Tape<T>&, const LmWeights<T>&, const AdapterWeights<T>&, const SequenceExample&,  \
                               const Tensor<float>*);

CYTOCAP_INSTANTIATE_ADAPTER(float)
CYTOCAP_INSTANTIATE_ADAPTER(double)

std::vector<GradCheckResult> adapter_grad_check(const LmWeights<float>& lm, const AdapterWeights<float>& adapter,
                                                std::span<const SequenceExample> batch,
                                                const GradCheckOptions& options) {
  if (batch.empty()) throw PreconditionError("adapter_grad_check: empty batch");
  LmWeights<double> lm64 = lm.cast<double>();
  AdapterWeights<double> ad64 = adapter.cast<double>();
  LossBuilder loss = [&](Tape<double>& tape) {
    Var<double> total = example_loss(tape, lm64, ad64, batch[0]);
    for (std::size_t i = 1; i < batch.size(); ++i) total = ops::add(total, example_loss(tape, lm64, ad64, batch[i]));
    return ops::scale(total, 1.0 / static_cast<double>(batch.size()));
  };
  std::vector<Param<double>*> params = ad64.params();
  return finite_diff_check(std::span<Param<double>* const>(params), loss, options);
}

}  // namespace cytocap
