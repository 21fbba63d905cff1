#include <gtest/gtest.h>

#include <cmath>

#include "chvit/errors.hpp"
#include "chvit/relevance.hpp"
#include "chvit/rng.hpp"

using namespace chvit;

namespace {

Tensor random_stochastic(std::size_t L, Rng& rng) {
  Tensor a({L, L});
  for (std::size_t r = 0; r < L; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < L; ++c) s += a(r, c) = rng.uniform() + 1e-3;
    for (std::size_t c = 0; c < L; ++c) a(r, c) /= s;
  }
  return a;
}

AttentionStack random_stack(std::size_t depth, std::size_t heads, std::size_t L, std::uint64_t seed) {
  Rng rng(seed);
  AttentionStack s(depth);
  for (auto& block : s)
    for (std::size_t h = 0; h < heads; ++h) block.push_back(random_stochastic(L, rng));
  return s;
}

ModelConfig small(Variant v, std::size_t depth = 2) {
  ModelConfig m;
  m.image_h = 8;
  m.image_w = 8;
  m.patch_size = 4;
  m.channels = 3;
  m.embed_dim = 8;
  m.depth = depth;
  m.heads = 2;
  m.mlp_hidden = 16;
  m.num_classes = 3;
  m.variant = v;
  return m;
}

ModelParams random_model(Variant v, std::uint64_t seed, std::size_t depth = 2) {
  Rng rng(seed);
  ModelParams p = init_params(small(v, depth), rng);
  for (auto& q : p.all())
    for (double& x : q.value.data) x = 0.5 * rng.normal();
  return p;
}

MultiChannelImage random_image(std::uint64_t seed) {
  Rng rng(seed);
  MultiChannelImage img(3, 8, 8);
  for (float& v : img.pixels) v = static_cast<float>(rng.normal());
  return img;
}

}  // namespace

TEST(Rollout, SingleLayerSingleHead) {
  Rng rng(1);
  const Tensor a = random_stochastic(4, rng);
  const Tensor r = attention_rollout({{a}});
  // 0.5 (A + I) is already row-stochastic when A is.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(r(i, j), 0.5 * (a(i, j) + (i == j ? 1.0 : 0.0)), 1e-15);
}

TEST(Rollout, UniformAttentionGivesUniformClsRowOverTokens) {
  const std::size_t L = 5;
  const Tensor u({L, L}, 1.0 / L);
  const Tensor r = attention_rollout({{u, u}, {u, u}, {u, u}});
  for (std::size_t j = 2; j < L; ++j) EXPECT_NEAR(r(0, j), r(0, 1), 1e-15);
}

TEST(Rollout, RowsStochasticAtEveryDepth) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto stack = random_stack(4, 3, 7, seed);
    for (std::size_t d = 1; d <= stack.size(); ++d) {
      const Tensor r = attention_rollout(AttentionStack(stack.begin(), stack.begin() + d));
      for (std::size_t i = 0; i < r.rows(); ++i) {
        double s = 0;
        for (double v : r.row(i)) s += v;
        EXPECT_LT(std::abs(s - 1.0), 1e-10);
      }
    }
  }
}

TEST(Rollout, EmptyStackIsStateError) {
  EXPECT_THROW(attention_rollout({}), StateError);
}

TEST(GradRelevance, NegativeProductsAreClamped) {
  // Gradients of opposite sign cancel to nothing once clamped.
  const Tensor a({2, 2}, {0.5, 0.5, 0.5, 0.5});
  const Tensor g({2, 2}, {-1.0, -2.0, -3.0, -4.0});
  const Tensor r = gradient_relevance({{a}}, {{g}});
  EXPECT_EQ(r.data, (std::vector<double>{1, 0, 0, 1}));
}

TEST(GradRelevance, HandComputedOneBlock) {
  const Tensor a({2, 2}, {0.25, 0.75, 0.5, 0.5});
  const Tensor g({2, 2}, {2.0, 1.0, -1.0, 4.0});
  const Tensor r = gradient_relevance({{a, a}}, {{g, Tensor({2, 2}, 0.0)}});
  // mean over heads of clamp(A*G): head 0 gives [0.5 0.75; 0 2], head 1 gives 0.
  EXPECT_NEAR(r(0, 0), 1.25, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.375, 1e-15);
  EXPECT_NEAR(r(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(r(1, 1), 2.0, 1e-15);
}

TEST(Relevance, MapShapesPerVariant) {
  const auto img = random_image(2);
  const ChannelCombination s({0, 2}, 3);
  for (auto method : {RelevanceMethod::rollout, RelevanceMethod::grad}) {
    const auto cv = compute_relevance(random_model(Variant::channelvit_tied, 3), img, s, 1, method);
    EXPECT_EQ(cv.raw.shape, (Shape{2, 4}));
    EXPECT_TRUE(cv.per_channel);
    const auto v = compute_relevance(random_model(Variant::vit, 3), img, s, 1, method);
    EXPECT_EQ(v.raw.shape, (Shape{1, 4}));
    EXPECT_FALSE(v.per_channel);
    EXPECT_EQ(compute_relevance(random_model(Variant::vit, 3), img, ChannelCombination({1}, 3), 0, method)
                  .raw.shape,
              (Shape{1, 4}));
  }
}

TEST(Relevance, ScoresNonnegativeFiniteAndNormalized) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_model(Variant::channelvit_tied, seed);
    for (auto method : {RelevanceMethod::rollout, RelevanceMethod::grad}) {
      const auto m = compute_relevance(p, random_image(seed + 10), ChannelCombination::full(3), seed % 3, method);
      double mx = 0;
      for (double v : m.raw.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_TRUE(std::isfinite(v));
        mx = std::max(mx, v);
      }
      double nmax = 0;
      for (std::size_t i = 0; i < m.raw.size(); ++i) {
        if (mx > 0) EXPECT_DOUBLE_EQ(m.normalized[i], m.raw[i] / mx);
        nmax = std::max(nmax, m.normalized[i]);
      }
      if (mx > 0) EXPECT_EQ(nmax, 1.0);
    }
  }
}

TEST(Relevance, Deterministic) {
  const auto p = random_model(Variant::channelvit_tied, 4);
  const auto img = random_image(5);
  const auto a = compute_relevance(p, img, ChannelCombination::full(3), 2, RelevanceMethod::grad);
  const auto b = compute_relevance(p, img, ChannelCombination::full(3), 2, RelevanceMethod::grad);
  EXPECT_EQ(a.raw.data, b.raw.data);
}

TEST(Relevance, DepthZeroLeavesOnlyCls) {
  const auto p = random_model(Variant::channelvit_tied, 6, 0);
  for (auto method : {RelevanceMethod::rollout, RelevanceMethod::grad}) {
    const auto m = compute_relevance(p, random_image(7), ChannelCombination::full(3), 0, method);
    for (double v : m.raw.data) EXPECT_EQ(v, 0.0);
    for (double v : m.normalized.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(Relevance, Errors) {
  const auto img = random_image(8);
  EXPECT_THROW(compute_relevance(random_model(Variant::vit, 9), img, ChannelCombination::full(3), 3,
                                 RelevanceMethod::grad),
               InputError);
  EXPECT_THROW(compute_relevance(random_model(Variant::multivit, 9), img, ChannelCombination::full(3), 0,
                                 RelevanceMethod::rollout),
               UnsupportedVariantError);
  EXPECT_THROW(parse_relevance_method("lrp"), ConfigError);
}

TEST(Summary, SingleAndDuplicatedImages) {
  const auto p = random_model(Variant::channelvit_tied, 10);
  const auto img = random_image(11);
  const auto one = channel_relevance_summary(p, {img}, {1}, RelevanceMethod::grad);
  ASSERT_EQ(one.classes, (std::vector<std::size_t>{1}));
  EXPECT_EQ(one.warnings.size(), 2u);

  const auto map = compute_relevance(p, img, ChannelCombination::full(3), 1, RelevanceMethod::grad);
  for (std::size_t c = 0; c < 3; ++c) {
    double mx = 0;
    for (double v : map.normalized.row(c)) mx = std::max(mx, v);
    EXPECT_DOUBLE_EQ(one.matrix(0, c), mx);
    EXPECT_GE(one.matrix(0, c), 0.0);
    EXPECT_LE(one.matrix(0, c), 1.0);
  }
  const auto two = channel_relevance_summary(p, {img, img}, {1, 1}, RelevanceMethod::grad);
  EXPECT_EQ(two.matrix.data, one.matrix.data);
  EXPECT_THROW(channel_relevance_summary(random_model(Variant::vit, 1), {img}, {0}, RelevanceMethod::grad),
               UnsupportedVariantError);
}

TEST(Heatmap, NearestUpsampleIsExact) {
  const Tensor g({2, 2}, {0.1, 0.2, 0.3, 0.4});
  const Tensor u = upsample_nearest(g, 3);
  ASSERT_EQ(u.shape, (Shape{6, 6}));
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(u(y, x), g(y / 3, x / 3));
}

TEST(Heatmap, PgmEncoding) {
  const std::string pgm = encode_pgm(Tensor({1, 3}, {0.0, 0.5, 2.0}));
  const std::string header = "P5\n3 1\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 3);
  EXPECT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 1]), 128);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 2]), 255);
}

TEST(Heatmap, CsvHasOneRowPerToken) {
  const auto p = random_model(Variant::channelvit_tied, 12);
  const auto m = compute_relevance(p, random_image(13), ChannelCombination({1, 2}, 3), 0, RelevanceMethod::rollout);
  const std::string csv = relevance_csv(m);
  EXPECT_EQ(csv.rfind("channel,patch,row,col,raw,normalized\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 4);
}
