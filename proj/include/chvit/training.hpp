#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "chvit/dataset.hpp"
#include "chvit/model.hpp"
#include "chvit/rng.hpp"
#include "chvit/sampling.hpp"

namespace chvit {

struct ScheduleConfig {
  double peak_lr = 5e-4;
  double final_lr = 1e-6;
  std::size_t warmup_epochs = 10;
  std::size_t total_epochs = 100;
  double wd_start = 0.04;
  double wd_end = 0.4;

  void validate() const;
};

/// Linear warmup 0 -> peak over the warmup epochs, then cosine peak -> final so that
/// the last step of the last epoch lands exactly on final_lr.
double lr_at(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& sched);

/// Cosine ramp wd_start -> wd_end over the whole run.
double wd_at(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& sched);

/// Adam moments for every parameter, in ModelParams order.
struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimState for_params(const ModelParams& params);
};

/// Which parameters receive weight decay. Weight matrices always do; biases and
/// layer-norm terms never do.
struct DecayPolicy {
  bool decay_embeddings = false;

  bool applies(const Parameter& p) const {
    return p.kind == ParamKind::weight || (decay_embeddings && p.kind == ParamKind::embedding);
  }
};

/// One AdamW update from the gradients stored in `params`: decoupled decay
/// (p -= lr*wd*p) followed by the bias-corrected Adam step. A non-finite gradient
/// raises NumericError naming the parameter; nothing is modified in that case.
void adamw_step(ModelParams& params, OptimState& state, double lr, double wd,
                const DecayPolicy& policy = {});

struct TrainConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  SamplerConfig sampler;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool decay_embeddings = false;
  /// One channel draw per batch (per distinct availability set) instead of per image.
  bool sample_per_batch = false;
  double clip_norm = 0.0;  ///< global gradient-norm clip; 0 disables

  void validate() const;
};

struct LogRow {
  std::size_t step;
  std::size_t epoch;
  double lr;
  double wd;
  double loss;

  bool operator==(const LogRow&) const = default;
};

/// One training example: the image must have the model's channel count; channels
/// outside `available` are never read.
struct Example {
  const MultiChannelImage* image;
  std::size_t label;
  std::span<const std::size_t> available;
};

/// Single-threaded supervised trainer. Parameter init, shuffling and channel
/// sampling draw from separate streams, so (config, seed) fixes the whole run.
class Trainer {
 public:
  Trainer(TrainConfig config, std::size_t steps_per_epoch);
  Trainer(TrainConfig config, ModelParams params, std::size_t steps_per_epoch);

  /// Per-image channel draw, forward, cross-entropy, backward, one AdamW step.
  /// Returns loss_scale times the batch-mean loss.
  double train_step(std::span<const Example> batch, double loss_scale = 1.0);

  /// One shuffled pass over `data` with every channel available.
  double train_epoch(const Dataset& data);

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<LogRow>& log() const { return log_; }
  std::size_t step() const { return step_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  Rng& shuffle_rng() { return shuffle_rng_; }

  /// Combination used for the most recent image (for inspection in tests).
  const std::vector<ChannelCombination>& last_combinations() const { return last_combinations_; }

 private:
  ChannelCombination draw_for(std::span<const std::size_t> available, std::size_t channels,
                              std::vector<std::pair<std::vector<std::size_t>, ChannelCombination>>& batch_draws);

  TrainConfig config_;
  ModelParams params_;
  OptimState opt_;
  ChannelSampler sampler_;
  Rng shuffle_rng_;
  std::size_t steps_per_epoch_;
  std::size_t step_ = 0;
  std::vector<LogRow> log_;
  std::vector<std::size_t> all_channels_;
  std::vector<ChannelCombination> last_combinations_;
};

/// Batches needed to cover n examples.
inline std::size_t steps_for(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

/// Builds a Trainer for `data` and runs schedule.total_epochs epochs.
Trainer train_model(const TrainConfig& config, const Dataset& data);

enum class MixedObjective : std::uint8_t { average, upsample };

MixedObjective parse_mixed_objective(std::string_view name);

/// Per-batch loss weights (|D1|+|D2|)/(2|Di|) of the upsampling objective.
std::pair<double, double> upsample_weights(std::size_t n_full, std::size_t n_partial);

/// One epoch over a fully-observed dataset and a dataset observing only a prefix of
/// its channels (matched by channel name). `average` shuffles the concatenation;
/// `upsample` interleaves dataset-homogeneous batches, weighting each by
/// upsample_weights. Channel sampling draws only from each image's own channels.
double mixed_train_epoch(Trainer& trainer, const Dataset& full, const Dataset& partial,
                         MixedObjective objective);

/// Optimizer steps one mixed_train_epoch takes.
std::size_t mixed_steps_per_epoch(std::size_t n_full, std::size_t n_partial, std::size_t batch_size,
                                  MixedObjective objective);

}  // namespace chvit
