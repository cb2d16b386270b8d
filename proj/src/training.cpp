#include "cytocap/training.hpp"

#include <cmath>
#include <thread>

#include "cytocap/random.hpp"

namespace cytocap {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValidationError("Adam betas must be in [0, 1)");
  if (adam_eps <= 0) throw ValidationError("adam_eps must be positive");
  if (threads == 0) throw ValidationError("threads must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"seed", c.seed},           {"optimizer", "adam"},              {"beta1", c.beta1},
          {"beta2", c.beta2},         {"adam_eps", c.adam_eps},           {"clip_norm", c.clip_norm},
          {"weight_decay", 0.0},      {"lr_schedule", "constant"}};
}

void Adam::step(const std::vector<Param<float>*>& params, const std::vector<Tensor<float>>& grads,
                AdamMoments& state) {
  ++state.step;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<float>& p = *params[i];
    auto& m = state.m.try_emplace(p.name, p.value.shape(), 0.0f).first->second;
    auto& v = state.v.try_emplace(p.name, p.value.shape(), 0.0f).first->second;
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double gj = g[j];
      const double mj = b1_ * m[j] + (1 - b1_) * gj;
      const double vj = b2_ * v[j] + (1 - b2_) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p.value[j] = static_cast<float>(p.value[j] - lr_ * (mj / c1) / (std::sqrt(vj / c2) + eps_));
    }
  }
}

double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (float x : g.values()) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
      for (auto& x : g.values()) x *= s;
  }
  return norm;
}

namespace {

std::vector<double> gate_values(const AdapterWeights<float>& a) {
  std::vector<double> out;
  for (const auto& b : a.xattn) {
    out.push_back(b.gate.value[0]);
    out.push_back(b.ffn_gate.value[0]);
  }
  return out;
}

}  // namespace

BatchGradient batch_gradient(const LmWeights<float>& lm, const AdapterWeights<float>& adapter,
                             std::span<const SequenceExample* const> batch,
                             std::span<const Tensor<float>* const> prefixes, std::size_t threads) {
  if (batch.empty()) throw PreconditionError("train_step: empty batch");
  if (!prefixes.empty() && prefixes.size() != batch.size()) throw PreconditionError("prefix cache size mismatch");
  std::vector<const Param<float>*> params;
  adapter.for_each_param([&](const Param<float>& p) { params.push_back(&p); });

  const std::size_t n = batch.size();
  std::vector<double> losses(n);
  std::vector<std::vector<Tensor<float>>> per_example(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      Tape<float> tape;
      Var<float> loss = example_loss(tape, lm, adapter, *batch[i], prefixes.empty() ? nullptr : prefixes[i]);
      losses[i] = loss.value()[0];
      if (!std::isfinite(losses[i])) return;
      tape.backward(loss);
      auto& g = per_example[i];
      g.reserve(params.size());
      for (const auto* p : params) {
        const Tensor<float>* gp = tape.param_grad(*p);
        g.push_back(gp ? *gp : Tensor<float>(p->value.shape(), 0.0f));
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t t = std::max<std::size_t>(1, std::min(threads, n));
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += t) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchGradient out;
  out.example_losses = losses;
  double total = 0;
  for (double l : losses) total += l;
  out.loss = total / static_cast<double>(n);
  if (!std::isfinite(out.loss)) {
    std::vector<std::string> ids;
    for (const auto* ex : batch) ids.push_back(ex->id);
    std::string msg = "non-finite training loss; batch:";
    for (const auto& id : ids) msg += " " + id;
    msg += "; gates:";
    for (double g : gate_values(adapter)) msg += " " + std::to_string(g);
    throw TrainingDivergedError(msg, std::move(ids), gate_values(adapter));
  }
  const float inv = 1.0f / static_cast<float>(n);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<float> sum(params[k]->value.shape(), 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = per_example[i][k];
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += g[j];
    }
    for (auto& x : sum.values()) x *= inv;
    out.grads.push_back(std::move(sum));
  }
  return out;
}

double train_step(Checkpoint& ckpt, std::span<const SequenceExample* const> batch, const TrainConfig& config,
                  std::span<const Tensor<float>* const> prefixes) {
  BatchGradient bg = batch_gradient(ckpt.lm, ckpt.adapter, batch, prefixes, config.threads);
  if (config.clip_norm > 0) clip_global_norm(bg.grads, config.clip_norm);
  Adam opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
  opt.step(ckpt.adapter.params(), bg.grads, ckpt.optimizer);
  return bg.loss;
}

Checkpoint initial_checkpoint(Vocab vocab, LmWeights<float> lm, const AdapterConfig& adapter_config) {
  Checkpoint c;
  c.adapter = init_adapter(adapter_config, lm.config);
  c.vocab = std::move(vocab);
  c.lm = std::move(lm);
  c.lm.set_trainable(false);
  c.train_state = {{"epoch", 0}, {"step", 0}, {"epoch_losses", json::array()}, {"step_losses", json::array()}};
  return c;
}

Checkpoint train(Checkpoint ckpt, const std::vector<SequenceExample>& examples, const TrainConfig& config,
                 const TrainCallbacks& callbacks) {
  config.validate();
  trainable_params(ckpt.lm, ckpt.adapter);  // asserts the LM is frozen
  if (config.epochs > 0 && examples.empty()) throw PreconditionError("train: empty training split");
  auto& st = ckpt.train_state;
  if (!st.contains("epoch")) st["epoch"] = 0;
  if (!st.contains("step")) st["step"] = 0;
  if (!st.contains("epoch_losses")) st["epoch_losses"] = json::array();
  if (!st.contains("step_losses")) st["step_losses"] = json::array();
  st["config"] = to_json(config);
  st["lm_sha256"] = lm_weight_hash(ckpt.lm);

  std::vector<Tensor<float>> prefix_cache;
  if (config.cache_prefix && st["epoch"].get<std::size_t>() < config.epochs) {
    prefix_cache.reserve(examples.size());
    for (const auto& ex : examples) prefix_cache.push_back(frozen_prefix(ex.input, ckpt.lm, ckpt.adapter.config.insert_every));
  }

  for (std::size_t epoch = st["epoch"].get<std::size_t>(); epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, epoch));
    shuffle_in_place(order, rng);
    double epoch_total = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const SequenceExample*> batch;
      std::vector<const Tensor<float>*> prefixes;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&examples[order[i]]);
        if (!prefix_cache.empty()) prefixes.push_back(&prefix_cache[order[i]]);
      }
      const double loss = train_step(ckpt, batch, config, prefixes);
      const std::size_t step = st["step"].get<std::size_t>() + 1;
      st["step"] = step;
      st["step_losses"].push_back(loss);
      epoch_total += loss;
      ++epoch_steps;
      if (callbacks.on_step) callbacks.on_step(epoch, step, loss);
    }
    st["epoch_losses"].push_back(epoch_total / static_cast<double>(epoch_steps));
    st["epoch"] = epoch + 1;
    if (callbacks.on_epoch) callbacks.on_epoch(ckpt);
  }
  return ckpt;
}

std::vector<double> pretrain_lm(LmWeights<float>& lm, const std::vector<std::vector<TokenId>>& sequences,
                                const PretrainConfig& config) {
  std::vector<double> losses;
  if (config.steps == 0) return losses;
  if (sequences.empty()) throw PreconditionError("pretrain_lm: no sequences");
  lm.set_trainable(true);
  std::vector<Param<float>*> params;
  lm.for_each_param([&](Param<float>& p) { params.push_back(&p); });
  AdamMoments state;
  Adam opt(config.learning_rate, 0.9, 0.999, 1e-8);
  Rng rng(derive_seed(config.seed, 0x9E7));
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Tensor<float>> grads;
    for (auto* p : params) grads.emplace_back(p->value.shape(), 0.0f);
    double total = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto& seq = sequences[uniform_index(rng, sequences.size())];
      if (seq.size() < 2) continue;
      std::vector<TokenId> in(seq.begin(), seq.end() - 1), tgt(seq.begin() + 1, seq.end());
      std::vector<std::uint8_t> mask(in.size(), 1);
      Tape<float> tape;
      Var<float> logits = lm_forward(tape, lm, std::span<const TokenId>(in));
      Var<float> loss = ops::masked_cross_entropy(logits, std::span<const TokenId>(tgt), std::span<const std::uint8_t>(mask));
      tape.backward(loss);
      total += loss.value()[0];
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (const Tensor<float>* g = tape.param_grad(*params[k])) {
          for (std::size_t j = 0; j < g->size(); ++j) grads[k][j] += (*g)[j];
        }
      }
    }
    const float inv = 1.0f / static_cast<float>(config.batch_size);
    for (auto& g : grads)
      for (auto& x : g.values()) x *= inv;
    if (config.clip_norm > 0) clip_global_norm(grads, config.clip_norm);
    opt.step(params, grads, state);
    losses.push_back(total / static_cast<double>(config.batch_size));
  }
  lm.set_trainable(false);
  return losses;
}

}  // namespace cytocap
