#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cytocap/checkpoint.hpp"

namespace cytocap {

struct TrainConfig {
  std::size_t epochs = 6;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 17;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t threads = 1;
  bool cache_prefix = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

// Thrown when a batch produces a non-finite loss.
struct TrainingDivergedError : Error {
  TrainingDivergedError(const std::string& what, std::vector<std::string> batch_ids, std::vector<double> gates)
      : Error(what), batch_ids(std::move(batch_ids)), gates(std::move(gates)) {}
  std::vector<std::string> batch_ids;
  std::vector<double> gates;  // pre-activation gate values, block order
};

// Adam with bias correction over a fixed parameter list; moments are keyed by
// parameter name so they round-trip through checkpoints.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(const std::vector<Param<float>*>& params, const std::vector<Tensor<float>>& grads, AdamMoments& state);

 private:
  double lr_, b1_, b2_, eps_;
};

// Scales grads in place to global L2 norm <= max_norm; returns the norm before clipping.
double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm);

// Batch-mean loss and its gradient for each adapter parameter (params()
// order). Per-example gradients are reduced in batch order, so the result
// does not depend on the thread count.
struct BatchGradient {
  double loss = 0.0;
  std::vector<double> example_losses;
  std::vector<Tensor<float>> grads;
};
BatchGradient batch_gradient(const LmWeights<float>& lm, const AdapterWeights<float>& adapter,
                             std::span<const SequenceExample* const> batch,
                             std::span<const Tensor<float>* const> prefixes, std::size_t threads);

// One optimizer update of ckpt.adapter; returns the batch loss before the update.
double train_step(Checkpoint& ckpt, std::span<const SequenceExample* const> batch, const TrainConfig& config,
                  std::span<const Tensor<float>* const> prefixes = {});

struct TrainCallbacks {
  std::function<void(std::size_t epoch, std::size_t step, double loss)> on_step;
  // Called with the state after each completed epoch (1-based count in train_state["epoch"]).
  std::function<void(const Checkpoint&)> on_epoch;
};

// Runs epochs train_state["epoch"] .. config.epochs-1 starting from `ckpt`.
// Each epoch shuffles with a seed derived from (config.seed, epoch), so a
// resumed run replays the same batches as an uninterrupted one.
Checkpoint train(Checkpoint ckpt, const std::vector<SequenceExample>& examples, const TrainConfig& config,
                 const TrainCallbacks& callbacks = {});

// Fresh checkpoint: given LM (frozen), new adapter, empty optimizer state.
Checkpoint initial_checkpoint(Vocab vocab, LmWeights<float> lm, const AdapterConfig& adapter_config);

struct PretrainConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 5;
  double clip_norm = 1.0;
};

// Next-token training of every LM weight on [BOS] text [EOS] sequences. The
// weights are frozen again on return. Returns per-step losses.
std::vector<double> pretrain_lm(LmWeights<float>& lm, const std::vector<std::vector<TokenId>>& sequences,
                                const PretrainConfig& config);

}  // namespace cytocap
