#include "chvit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "chvit/errors.hpp"

namespace chvit {

void ScheduleConfig::validate() const {
  if (total_epochs == 0) throw ConfigError("total_epochs must be >= 1");
  if (warmup_epochs > total_epochs) {
    throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) + ") exceeds total_epochs (" +
                      std::to_string(total_epochs) + ")");
  }
  if (!(final_lr <= peak_lr)) throw ConfigError("final_lr must not exceed peak_lr");
  if (final_lr < 0.0) throw ConfigError("final_lr must be >= 0");
  if (!(wd_start <= wd_end)) throw ConfigError("wd_start must not exceed wd_end");
  if (wd_start < 0.0) throw ConfigError("wd_start must be >= 0");
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& sched) {
  const double warm = static_cast<double>(sched.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(sched.total_epochs * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warm) return sched.peak_lr * s / warm;
  const double span = total - 1.0 - warm;
  if (span <= 0.0) return sched.final_lr;
  const double progress = std::min(1.0, (s - warm) / span);
  return sched.final_lr +
         0.5 * (sched.peak_lr - sched.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double wd_at(std::size_t step, std::size_t steps_per_epoch, const ScheduleConfig& sched) {
  const double total = static_cast<double>(sched.total_epochs * steps_per_epoch);
  if (total <= 1.0) return sched.wd_start;
  const double progress = std::min(1.0, static_cast<double>(step) / (total - 1.0));
  return sched.wd_end +
         0.5 * (sched.wd_start - sched.wd_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState OptimState::for_params(const ModelParams& params) {
  OptimState st;
  for (const auto& p : params.all()) {
    st.m.emplace_back(p.value.shape);
    st.v.emplace_back(p.value.shape);
  }
  return st;
}

void adamw_step(ModelParams& params, OptimState& state, double lr, double wd,
                const DecayPolicy& policy) {
  auto& all = params.all();
  if (state.m.size() != all.size()) {
    throw DimensionError("optimizer state holds " + std::to_string(state.m.size()) +
                         " moments for " + std::to_string(all.size()) + " parameters");
  }
  for (const auto& p : all) {
    if (!p.grad.empty() && !p.grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < all.size(); ++i) {
    Parameter& p = all[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const bool decay = policy.applies(p) && wd != 0.0;
    const bool has_grad = !p.grad.empty();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = has_grad ? p.grad[j] : 0.0;
      if (decay) p.value[j] -= lr * wd * p.value[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  schedule.validate();
  sampler.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (model.variant == Variant::channelvit_shared_chn) {
    throw ConfigError(
        "channelvit_shared_chn is an evaluation transform; train channelvit_tied instead");
  }
}

namespace {

ModelParams fresh_params(const TrainConfig& config) {
  config.validate();
  Rng root(config.seed);
  Rng init = root.split();
  return init_params(config.model, init);
}

Rng shuffle_stream(std::uint64_t seed) {
  Rng root(seed);
  root.split();
  return root.split();
}

void clip_gradients(ModelParams& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.all()) {
    for (double g : p.grad.data) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  for (auto& p : params.all()) {
    for (double& g : p.grad.data) g *= f;
  }
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::size_t steps_per_epoch)
    : Trainer(config, fresh_params(config), steps_per_epoch) {}

Trainer::Trainer(TrainConfig config, ModelParams params, std::size_t steps_per_epoch)
    : config_(config),
      params_(std::move(params)),
      opt_(OptimState::for_params(params_)),
      sampler_(config.sampler),
      shuffle_rng_(shuffle_stream(config.seed)),
      steps_per_epoch_(steps_per_epoch) {
  config_.validate();
  if (steps_per_epoch_ == 0) throw ConfigError("steps_per_epoch must be >= 1");
  if (!(params_.config() == config_.model)) {
    throw ConfigError("parameters were built for a different model config");
  }
  all_channels_.resize(config_.model.channels);
  std::iota(all_channels_.begin(), all_channels_.end(), std::size_t{0});
}

ChannelCombination Trainer::draw_for(
    std::span<const std::size_t> available, std::size_t channels,
    std::vector<std::pair<std::vector<std::size_t>, ChannelCombination>>& batch_draws) {
  if (!config_.sample_per_batch) return sampler_.draw(available, channels);
  for (const auto& [set, combination] : batch_draws) {
    if (std::ranges::equal(set, available)) return combination;
  }
  ChannelCombination S = sampler_.draw(available, channels);
  batch_draws.emplace_back(std::vector<std::size_t>(available.begin(), available.end()), S);
  return S;
}

double Trainer::train_step(std::span<const Example> batch, double loss_scale) {
  if (batch.empty()) throw InputError("train_step needs a nonempty batch");
  const std::size_t C = config_.model.channels;
  const double seed = loss_scale / static_cast<double>(batch.size());
  params_.zero_grad();
  last_combinations_.clear();
  std::vector<std::pair<std::vector<std::size_t>, ChannelCombination>> batch_draws;
  double total = 0.0;
  for (const Example& ex : batch) {
    if (ex.image == nullptr || ex.image->channels != C) {
      throw InputError("example image must have " + std::to_string(C) + " channels");
    }
    ChannelCombination S = draw_for(ex.available, C, batch_draws);
    Graph g;
    Binding b = Binding::accumulating(g, params_);
    Var logits = model_logits(b, *ex.image, S);
    const std::size_t label = ex.label;
    Var loss = cross_entropy(logits, std::span<const std::size_t>(&label, 1));
    total += loss.value()[0];
    g.backward(loss, Tensor::scalar(seed));
    last_combinations_.push_back(std::move(S));
  }
  if (config_.clip_norm > 0.0) clip_gradients(params_, config_.clip_norm);
  const double lr = lr_at(step_, steps_per_epoch_, config_.schedule);
  const double wd = wd_at(step_, steps_per_epoch_, config_.schedule);
  adamw_step(params_, opt_, lr, wd, DecayPolicy{config_.decay_embeddings});
  const double mean = loss_scale * total / static_cast<double>(batch.size());
  log_.push_back({step_, step_ / steps_per_epoch_, lr, wd, mean});
  ++step_;
  return mean;
}

double Trainer::train_epoch(const Dataset& data) {
  if (data.size() == 0) throw InputError("cannot train on an empty dataset");
  if (data.channels != config_.model.channels) {
    throw InputError("dataset has " + std::to_string(data.channels) + " channels, model expects " +
                     std::to_string(config_.model.channels));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng_.shuffle(order.begin(), order.end());
  const std::size_t B = config_.batch_size;
  double sum = 0.0;
  std::size_t steps = 0;
  std::vector<Example> batch;
  for (std::size_t start = 0; start < order.size(); start += B) {
    batch.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + B); ++i) {
      batch.push_back({&data.images[order[i]], data.labels[order[i]], all_channels_});
    }
    sum += train_step(batch);
    ++steps;
  }
  return sum / static_cast<double>(steps);
}

Trainer train_model(const TrainConfig& config, const Dataset& data) {
  Trainer trainer(config, steps_for(data.size(), config.batch_size));
  for (std::size_t e = 0; e < config.schedule.total_epochs; ++e) trainer.train_epoch(data);
  return trainer;
}

MixedObjective parse_mixed_objective(std::string_view name) {
  if (name == "average") return MixedObjective::average;
  if (name == "upsample") return MixedObjective::upsample;
  throw ConfigError("unknown mixed objective '" + std::string(name) + "' (average, upsample)");
}

std::pair<double, double> upsample_weights(std::size_t n_full, std::size_t n_partial) {
  if (n_full == 0 || n_partial == 0) throw InputError("upsample weights need two nonempty datasets");
  const double n = static_cast<double>(n_full + n_partial);
  return {n / (2.0 * static_cast<double>(n_full)), n / (2.0 * static_cast<double>(n_partial))};
}

std::size_t mixed_steps_per_epoch(std::size_t n_full, std::size_t n_partial, std::size_t batch_size,
                                  MixedObjective objective) {
  if (objective == MixedObjective::average) return steps_for(n_full + n_partial, batch_size);
  return steps_for(n_full, batch_size) + steps_for(n_partial, batch_size);
}

namespace {

void check_compatible(const Dataset& full, const Dataset& partial, std::size_t model_channels) {
  if (full.channels != model_channels) {
    throw InputError("full dataset has " + std::to_string(full.channels) +
                     " channels, model expects " + std::to_string(model_channels));
  }
  if (partial.channels == 0 || partial.channels > full.channels) {
    throw InputError("partial dataset must observe between 1 and " +
                     std::to_string(full.channels) + " channels");
  }
  if (full.height != partial.height || full.width != partial.width ||
      full.num_classes != partial.num_classes) {
    throw InputError("full and partial datasets disagree on geometry or class count");
  }
  for (std::size_t c = 0; c < partial.channels; ++c) {
    if (full.channel_names.size() <= c || partial.channel_names.size() <= c ||
        full.channel_names[c] != partial.channel_names[c]) {
      throw InputError("channel " + std::to_string(c) +
                       " of the partial dataset does not match the full dataset's channel names");
    }
  }
}

MultiChannelImage pad_channels(const MultiChannelImage& img, std::size_t channels) {
  MultiChannelImage out(channels, img.height, img.width);
  std::copy(img.pixels.begin(), img.pixels.end(), out.pixels.begin());
  return out;
}

}  // namespace

double mixed_train_epoch(Trainer& trainer, const Dataset& full, const Dataset& partial,
                         MixedObjective objective) {
  const std::size_t C = trainer.config().model.channels;
  check_compatible(full, partial, C);
  if (full.size() == 0 && partial.size() == 0) throw InputError("both datasets are empty");

  std::vector<MultiChannelImage> padded;
  padded.reserve(partial.size());
  for (const auto& img : partial.images) padded.push_back(pad_channels(img, C));

  std::vector<std::size_t> full_ids(C);
  std::iota(full_ids.begin(), full_ids.end(), std::size_t{0});
  std::vector<std::size_t> partial_ids(partial.channels);
  std::iota(partial_ids.begin(), partial_ids.end(), std::size_t{0});

  // Index i < |full| refers to full, the rest to partial.
  auto example = [&](std::size_t i) -> Example {
    if (i < full.size()) return {&full.images[i], full.labels[i], full_ids};
    const std::size_t j = i - full.size();
    return {&padded[j], partial.labels[j], partial_ids};
  };

  const std::size_t B = trainer.config().batch_size;
  Rng& rng = trainer.shuffle_rng();
  double sum = 0.0;
  std::size_t steps = 0;
  std::vector<Example> batch;

  if (objective == MixedObjective::average) {
    std::vector<std::size_t> order(full.size() + partial.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += B) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + B); ++i) {
        batch.push_back(example(order[i]));
      }
      sum += trainer.train_step(batch);
      ++steps;
    }
    return sum / static_cast<double>(steps);
  }

  if (full.size() == 0 || partial.size() == 0) {
    throw InputError("upsample objective needs two nonempty datasets");
  }
  const auto [w_full, w_partial] = upsample_weights(full.size(), partial.size());
  std::vector<std::size_t> of(full.size());
  std::iota(of.begin(), of.end(), std::size_t{0});
  std::vector<std::size_t> op(partial.size());
  std::iota(op.begin(), op.end(), full.size());
  rng.shuffle(of.begin(), of.end());
  rng.shuffle(op.begin(), op.end());

  // Alternate the two streams while both have batches left.
  std::size_t pf = 0;
  std::size_t pp = 0;
  bool take_full = true;
  while (pf < of.size() || pp < op.size()) {
    const bool use_full = pp >= op.size() || (take_full && pf < of.size());
    auto& ids = use_full ? of : op;
    std::size_t& pos = use_full ? pf : pp;
    batch.clear();
    const std::size_t end = std::min(ids.size(), pos + B);
    for (; pos < end; ++pos) batch.push_back(example(ids[pos]));
    sum += trainer.train_step(batch, use_full ? w_full : w_partial);
    ++steps;
    take_full = !take_full;
  }
  return sum / static_cast<double>(steps);
}

}  // namespace chvit
