#include <gtest/gtest.h>

#include <cmath>

#include "chvit/checkpoint.hpp"
#include "chvit/errors.hpp"
#include "chvit/training.hpp"
#include "oracles.hpp"

using namespace chvit;

namespace {

ScheduleConfig paper_schedule() {
  ScheduleConfig s;
  s.total_epochs = 100;
  return s;
}

ModelParams scalar_param(double value, double grad, ParamKind kind) {
  ModelParams p;
  auto& q = p.add("w", Tensor({1}, {value}), kind);
  q.grad = Tensor({1}, {grad});
  return p;
}

TrainConfig tiny_config(Variant v = Variant::channelvit_tied, std::size_t channels = 2) {
  TrainConfig t;
  t.model.image_h = 8;
  t.model.image_w = 8;
  t.model.patch_size = 4;
  t.model.channels = channels;
  t.model.embed_dim = 16;
  t.model.depth = 1;
  t.model.heads = 2;
  t.model.mlp_hidden = 32;
  t.model.num_classes = 4;
  t.model.variant = v;
  t.batch_size = 4;
  t.schedule.total_epochs = 3;
  t.schedule.warmup_epochs = 1;
  t.seed = 5;
  t.sampler.seed = 5;
  return t;
}

Dataset random_dataset(std::size_t n, std::size_t channels, std::uint64_t seed, std::size_t K = 4) {
  Rng rng(seed);
  Dataset d;
  d.channels = channels;
  d.height = 8;
  d.width = 8;
  d.num_classes = K;
  for (std::size_t c = 0; c < channels; ++c) d.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    MultiChannelImage img(channels, 8, 8);
    for (float& v : img.pixels) v = static_cast<float>(rng.normal());
    d.images.push_back(img);
    d.labels.push_back(static_cast<std::uint16_t>(rng.uniform_int(K)));
  }
  return d;
}

}  // namespace

TEST(Schedule, LearningRateEndpoints) {
  const auto s = paper_schedule();
  const std::size_t spe = 10;
  EXPECT_EQ(lr_at(0, spe, s), 0.0);
  EXPECT_NEAR(lr_at(100, spe, s), 5e-4, 1e-15);
  EXPECT_NEAR(lr_at(999, spe, s), 1e-6, 1e-15);
}

TEST(Schedule, ContinuousAtWarmupJunction) {
  const auto s = paper_schedule();
  const std::size_t spe = 10, W = 100;
  // Warmup line evaluated at the junction vs the cosine branch.
  const double line = s.peak_lr * static_cast<double>(W) / static_cast<double>(W);
  EXPECT_LT(std::abs(lr_at(W, spe, s) - line), 1e-12);
  const double slope = s.peak_lr / static_cast<double>(W);
  EXPECT_LT(std::abs(lr_at(W - 1, spe, s) + slope - lr_at(W, spe, s)), 1e-12);
}

TEST(Schedule, CosineDecayIsMonotone) {
  const auto s = paper_schedule();
  for (std::size_t t = 100; t < 999; ++t) EXPECT_GE(lr_at(t, 10, s), lr_at(t + 1, 10, s));
}

TEST(Schedule, WeightDecayRamp) {
  ScheduleConfig s;
  s.total_epochs = 1;
  s.warmup_epochs = 0;
  const std::size_t spe = 101;
  EXPECT_NEAR(wd_at(0, spe, s), 0.04, 1e-15);
  EXPECT_NEAR(wd_at(100, spe, s), 0.4, 1e-15);
  EXPECT_NEAR(wd_at(50, spe, s), 0.22, 1e-12);
}

TEST(Schedule, Validation) {
  ScheduleConfig s;
  s.total_epochs = 5;
  s.warmup_epochs = 6;
  EXPECT_THROW(s.validate(), ConfigError);
  s.warmup_epochs = 1;
  s.wd_start = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  auto p = scalar_param(0.7, 0.0, ParamKind::weight);
  auto st = OptimState::for_params(p);
  adamw_step(p, st, 1e-3, 0.0);
  EXPECT_EQ(p.at("w").value[0], 0.7);
}

TEST(AdamW, ScalarStepMatchesHandComputation) {
  const double w0 = 0.7, g = -0.3, lr = 1e-2, wd = 0.1;
  auto p = scalar_param(w0, g, ParamKind::weight);
  auto st = OptimState::for_params(p);
  adamw_step(p, st, lr, wd);
  const double decayed = w0 - lr * wd * w0;
  const double m = 0.1 * g, v = 0.001 * g * g;
  const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  EXPECT_NEAR(p.at("w").value[0], decayed - lr * mhat / (std::sqrt(vhat) + 1e-8), 1e-12);

  // Second step with a new gradient.
  const double g2 = 0.5;
  p.at("w").grad[0] = g2;
  const double w1 = p.at("w").value[0];
  adamw_step(p, st, lr, wd);
  const double m2 = 0.9 * m + 0.1 * g2, v2 = 0.999 * v + 0.001 * g2 * g2;
  const double expect = (w1 - lr * wd * w1) - lr * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p.at("w").value[0], expect, 1e-12);
}

TEST(AdamW, DecayShrinksByExactFactor) {
  auto p = scalar_param(2.0, 0.0, ParamKind::weight);
  auto st = OptimState::for_params(p);
  adamw_step(p, st, 0.01, 0.4);
  EXPECT_NEAR(p.at("w").value[0], 2.0 * (1 - 0.01 * 0.4), 1e-15);
}

TEST(AdamW, BiasNormAndEmbeddingsAreNotDecayed) {
  ModelParams p;
  p.add("head.w", Tensor({2}, {1.0, -1.0}), ParamKind::weight);
  p.add("head.b", Tensor({2}, {1.0, -1.0}), ParamKind::bias);
  p.add("norm.g", Tensor({2}, 1.0), ParamKind::norm);
  p.add("chn", Tensor({2}, {0.5, 0.5}), ParamKind::embedding);
  p.zero_grad();
  auto st = OptimState::for_params(p);
  adamw_step(p, st, 0.1, 0.4);
  EXPECT_NE(p.at("head.w").value[0], 1.0);
  EXPECT_EQ(p.at("head.b").value.data, (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(p.at("norm.g").value.data, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(p.at("chn").value.data, (std::vector<double>{0.5, 0.5}));
  adamw_step(p, st, 0.1, 0.4, DecayPolicy{true});
  EXPECT_NE(p.at("chn").value[0], 0.5);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  ModelParams p;
  p.add("ok", Tensor({1}, {1.0}), ParamKind::weight);
  p.add("blocks.0.attn.wq", Tensor({1}, {1.0}), ParamKind::weight);
  p.zero_grad();
  p.at("blocks.0.attn.wq").grad[0] = std::nan("");
  auto st = OptimState::for_params(p);
  try {
    adamw_step(p, st, 0.1, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blocks.0.attn.wq"), std::string::npos);
  }
  EXPECT_EQ(p.at("ok").value[0], 1.0);
}

TEST(Trainer, NoSamplerUsesAllChannels) {
  auto cfg = tiny_config();
  cfg.sampler.mode = SamplerMode::none;
  const auto data = random_dataset(8, 2, 1);
  Trainer t(cfg, 2);
  t.train_epoch(data);
  for (const auto& c : t.last_combinations()) EXPECT_TRUE(c.is_full());
}

TEST(Trainer, DoesNotMutateDataset) {
  const auto data = random_dataset(8, 2, 2);
  const Dataset copy = data;
  Trainer t(tiny_config(), 2);
  t.train_epoch(data);
  EXPECT_EQ(data, copy);
}

TEST(Trainer, MemorizesSixteenImages) {
  auto cfg = tiny_config(Variant::channelvit_tied);
  cfg.sampler.mode = SamplerMode::none;
  cfg.batch_size = 16;
  cfg.schedule.peak_lr = 5e-3;
  cfg.schedule.final_lr = 1e-4;
  cfg.schedule.warmup_epochs = 10;
  cfg.schedule.total_epochs = 200;
  cfg.schedule.wd_start = 0.0;
  cfg.schedule.wd_end = 0.0;
  const auto data = random_dataset(16, 2, 3);
  const Trainer t = train_model(cfg, data);
  ASSERT_EQ(t.log().size(), 200u);
  EXPECT_LT(t.log().back().loss, 0.01);
}

TEST(Trainer, SameSeedSameTrajectoryAndCheckpoint) {
  const auto data = random_dataset(12, 2, 4);
  for (Variant v : {Variant::channelvit_tied, Variant::vit}) {
    const Trainer a = train_model(tiny_config(v), data);
    const Trainer b = train_model(tiny_config(v), data);
    EXPECT_EQ(a.log(), b.log());
    EXPECT_EQ(encode_checkpoint(a.params()), encode_checkpoint(b.params()));
    auto other = tiny_config(v);
    other.seed = 6;
    EXPECT_NE(train_model(other, data).log(), a.log());
  }
}

TEST(Trainer, LogColumnsFollowSchedule) {
  const auto data = random_dataset(8, 2, 5);
  const auto cfg = tiny_config();
  const Trainer t = train_model(cfg, data);
  ASSERT_EQ(t.log().size(), 6u);
  for (const auto& r : t.log()) {
    EXPECT_EQ(r.lr, lr_at(r.step, 2, cfg.schedule));
    EXPECT_EQ(r.wd, wd_at(r.step, 2, cfg.schedule));
    EXPECT_EQ(r.epoch, r.step / 2);
  }
}

TEST(Trainer, RejectsSharedEmbeddingVariant) {
  auto cfg = tiny_config(Variant::channelvit_shared_chn);
  EXPECT_THROW(Trainer(cfg, 1), ConfigError);
}

TEST(Mixed, UpsampleWeights) {
  const auto [w1, w2] = upsample_weights(300, 100);
  EXPECT_DOUBLE_EQ(w1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(w2, 2.0);
  const auto [e1, e2] = upsample_weights(50, 50);
  EXPECT_EQ(e1, 1.0);
  EXPECT_EQ(e2, 1.0);
  EXPECT_EQ(parse_mixed_objective("upsample"), MixedObjective::upsample);
  EXPECT_THROW(parse_mixed_objective("sum"), ConfigError);
}

TEST(Mixed, PartialImagesOnlySeeTheirChannels) {
  auto cfg = tiny_config(Variant::channelvit_tied, 8);
  cfg.sampler.mode = SamplerMode::hcs;
  const auto full = random_dataset(6, 8, 6);
  const auto partial = random_dataset(6, 5, 7);
  for (auto obj : {MixedObjective::average, MixedObjective::upsample}) {
    Trainer t(cfg, mixed_steps_per_epoch(6, 6, cfg.batch_size, obj));
    for (int e = 0; e < 2; ++e) mixed_train_epoch(t, full, partial, obj);
    EXPECT_EQ(t.log().size(), 2 * mixed_steps_per_epoch(6, 6, cfg.batch_size, obj));
  }
}

TEST(Mixed, UpsampleBatchesAreHomogeneous) {
  auto cfg = tiny_config(Variant::channelvit_tied, 8);
  cfg.sampler.mode = SamplerMode::none;
  cfg.batch_size = 3;
  const auto full = random_dataset(3, 8, 8);
  const auto partial = random_dataset(9, 5, 9);
  const std::vector<std::size_t> prefix{0, 1, 2, 3, 4};
  // One full batch then three partial ones; the last batch must be all-partial.
  Trainer t(cfg, mixed_steps_per_epoch(3, 9, 3, MixedObjective::upsample));
  mixed_train_epoch(t, full, partial, MixedObjective::upsample);
  ASSERT_EQ(t.log().size(), 4u);
  ASSERT_EQ(t.last_combinations().size(), 3u);
  for (const auto& c : t.last_combinations()) EXPECT_EQ(c.indices(), prefix);

  Trainer u(cfg, 4);
  Dataset one_full = full;
  mixed_train_epoch(u, one_full, random_dataset(1, 5, 9), MixedObjective::upsample);
  // Full batch first when both streams have data.
  EXPECT_EQ(u.log().size(), 2u);
}

TEST(Mixed, PartialOnlyReducesToPrefixChannels) {
  auto cfg = tiny_config(Variant::channelvit_tied, 8);
  cfg.sampler.mode = SamplerMode::none;
  auto full = random_dataset(0, 8, 10);
  const auto partial = random_dataset(5, 5, 11);
  Trainer t(cfg, 2);
  mixed_train_epoch(t, full, partial, MixedObjective::average);
  const std::vector<std::size_t> prefix{0, 1, 2, 3, 4};
  for (const auto& c : t.last_combinations()) EXPECT_EQ(c.indices(), prefix);
}

TEST(Mixed, InconsistentChannelNamesRejected) {
  auto cfg = tiny_config(Variant::channelvit_tied, 8);
  const auto full = random_dataset(4, 8, 12);
  auto partial = random_dataset(4, 5, 13);
  partial.channel_names[3] = "brightfield";
  Trainer t(cfg, 2);
  EXPECT_THROW(mixed_train_epoch(t, full, partial, MixedObjective::average), InputError);
}

TEST(Trainer, PerBatchSamplingSharesOneDraw) {
  auto cfg = tiny_config(Variant::channelvit_tied, 5);
  cfg.sample_per_batch = true;
  const auto data = random_dataset(8, 5, 14);
  Trainer t(cfg, 2);
  t.train_epoch(data);
  const auto& combos = t.last_combinations();
  ASSERT_EQ(combos.size(), 4u);
  for (const auto& c : combos) EXPECT_EQ(c, combos.front());

  cfg.sample_per_batch = false;
  Trainer u(cfg, 2);
  bool varied = false;
  for (int e = 0; e < 5 && !varied; ++e) {
    u.train_epoch(data);
    for (const auto& c : u.last_combinations()) varied |= !(c == u.last_combinations().front());
  }
  EXPECT_TRUE(varied);
}
