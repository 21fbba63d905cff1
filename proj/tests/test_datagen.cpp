#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "chvit/errors.hpp"
#include "chvit/dataset.hpp"

using namespace chvit;

namespace {

SynthConfig base() {
  SynthConfig c;
  c.channels = 4;
  c.height = 8;
  c.width = 8;
  c.train_samples = 20;
  c.test_samples = 5;
  c.seed = 3;
  return c;
}

double plugin_mutual_information(const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> px, py;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[{x[i], y[i]}] += 1 / n;
    px[x[i]] += 1 / n;
    py[y[i]] += 1 / n;
  }
  double mi = 0;
  for (const auto& [k, p] : joint) mi += p * std::log(p / (px[k.first] * py[k.second]));
  return mi;
}

ModelParams embeddings(const std::vector<std::vector<double>>& rows, Variant v = Variant::channelvit_tied) {
  ModelConfig m;
  m.channels = rows.size();
  m.embed_dim = rows[0].size();
  m.variant = v;
  ModelParams p(m);
  Tensor chn({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) chn(i, j) = rows[i][j];
  p.add("chn", chn, ParamKind::embedding);
  return p;
}

}  // namespace

TEST(Generate, FullCorrelationCopiesChannelsBitExactly) {
  auto c = base();
  c.groups = {0, 0, 1, 1};
  c.rho_in = 1.0;
  c.info_mode = InfoMode::redundant;
  const auto d = generate(c).train.data;
  for (const auto& img : d.images)
    for (std::size_t p = 0; p < img.plane(); ++p) {
      EXPECT_EQ(img.pixels[p], img.pixels[img.plane() + p]);
      EXPECT_EQ(img.pixels[2 * img.plane() + p], img.pixels[3 * img.plane() + p]);
    }
}

TEST(Generate, BackgroundCorrelationMatchesTarget) {
  auto c = base();
  c.height = c.width = 16;
  c.groups = {0, 0, 1, 1};
  c.rho_in = 0.6;
  c.rho_out = -0.3;
  c.signal = 0.0;
  c.train_samples = 1000;
  c.test_samples = 1;
  const Tensor target = target_correlation(c);
  const Tensor emp = channel_pixel_correlation(generate(c).train.data);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_LT(std::abs(emp[i] - target[i]), 0.05) << i;
}

TEST(Generate, CorrelationWithStripesMatchesMixture) {
  // Period-4 axis-aligned stripes of amplitude 1 have pixel variance 1/2, shared
  // within a group and independent across groups.
  auto c = base();
  c.height = c.width = 16;
  c.groups = {0, 0, 1, 1};
  c.info_mode = InfoMode::complementary;
  c.rho_in = 0.5;
  c.rho_out = 0.2;
  c.train_samples = 1000;
  c.test_samples = 1;
  const Tensor emp = channel_pixel_correlation(generate(c).train.data);
  EXPECT_LT(std::abs(emp(0, 1) - (0.5 + 0.5) / 1.5), 0.05);
  EXPECT_LT(std::abs(emp(2, 3) - (0.5 + 0.5) / 1.5), 0.05);
  EXPECT_LT(std::abs(emp(0, 2) - 0.2 / 1.5), 0.05);
}

TEST(Generate, CorrelationMatricesSymmetricUnitDiagonal) {
  auto c = base();
  c.groups = {0, 1, 1, 2};
  c.rho_in = 0.3;
  c.rho_out = 0.1;
  const Tensor emp = channel_pixel_correlation(generate(c).train.data);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(emp(i, i), 1.0, 1e-9);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(emp(i, j), emp(j, i), 1e-9);
  }
  const Tensor l = psd_cholesky(emp, "empirical");
  EXPECT_TRUE(l.all_finite());
}

TEST(Generate, NonPsdTargetNamesMatrix) {
  auto c = base();
  c.channels = 3;
  c.groups = {0, 1, 2};
  c.rho_out = -0.9;
  try {
    generate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("background correlation"), std::string::npos);
  }
}

TEST(Generate, ConfigValidation) {
  auto c = base();
  c.info_mode = InfoMode::complementary;
  EXPECT_THROW(generate(c), ConfigError);  // one group
  c = base();
  c.rho_in = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = base();
  c.groups = {0, 2, 2, 0};
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Generate, DeterministicInConfigAndSeed) {
  auto c = base();
  const auto a = generate(c);
  const auto b = generate(c);
  EXPECT_EQ(encode_dataset(a.train.data), encode_dataset(b.train.data));
  EXPECT_EQ(encode_dataset(a.test.data), encode_dataset(b.test.data));
  c.seed = 4;
  EXPECT_NE(encode_dataset(generate(c).train.data), encode_dataset(a.train.data));
}

TEST(Generate, ComplementaryLabelNeedsBothGroups) {
  auto c = base();
  c.groups = {0, 0, 1, 1};
  c.info_mode = InfoMode::complementary;
  c.train_samples = 4000;
  c.test_samples = 1;
  const auto split = generate(c).train;
  std::vector<std::size_t> y, g0, g1, both;
  for (std::size_t i = 0; i < split.data.size(); ++i) {
    y.push_back(split.data.labels[i]);
    g0.push_back(split.latents[i][0]);
    g1.push_back(split.latents[i][1]);
    both.push_back(split.latents[i][0] + 2 * split.latents[i][1]);
  }
  const double mi_all = plugin_mutual_information(both, y);
  EXPECT_LT(plugin_mutual_information(g0, y), mi_all);
  EXPECT_LT(plugin_mutual_information(g1, y), mi_all);

  // Best classifier from group 0's latent: majority label per latent value.
  std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < y.size(); ++i) ++counts[g0[i]][y[i]];
  std::size_t correct = 0;
  for (const auto& [latent, hist] : counts) {
    std::size_t best = 0;
    for (const auto& [label, n] : hist) best = std::max(best, n);
    correct += best;
  }
  const double K = 4.0;
  EXPECT_LE(static_cast<double>(correct) / static_cast<double>(y.size()), 1 / K + 0.5 * (1 - 1 / K));
}

TEST(DatasetFile, RoundTripBitExact) {
  const auto d = generate(base()).train.data;
  const auto path = (std::filesystem::temp_directory_path() / "chvit_rt.mcds").string();
  save_dataset(d, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back, d);
  EXPECT_EQ(encode_dataset(back), encode_dataset(d));
  std::filesystem::remove(path);
}

TEST(DatasetFile, CorruptedMagic) {
  std::string bytes = encode_dataset(generate(base()).train.data);
  bytes[0] = 'X';
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(DatasetFile, TruncatedReportsByteCounts) {
  const std::string bytes = encode_dataset(generate(base()).train.data);
  try {
    decode_dataset(std::string_view(bytes).substr(0, bytes.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos);
    EXPECT_NE(msg.find(std::to_string(bytes.size() - 3)), std::string::npos);
  }
}

TEST(DatasetFile, ZeroSamplesIsEmpty) {
  auto c = base();
  c.train_samples = 0;
  const auto d = generate(c).train.data;
  const auto back = decode_dataset(encode_dataset(d));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.channels, 4u);
}

TEST(EmbeddingCorrelation, EqualAndOpposite) {
  const auto p = embeddings({{1, 2, 3}, {1, 2, 3}, {-1, -2, -3}, {0.5, -1, 2}});
  const Tensor r = channel_embedding_correlation(p);
  EXPECT_NEAR(r(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(r(0, 2), -1.0, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r(i, i), 1.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(r(i, j), r(j, i));
}

TEST(EmbeddingCorrelation, RejectsVit) {
  ModelConfig m;
  m.variant = Variant::vit;
  EXPECT_THROW(channel_embedding_correlation(ModelParams(m)), UnsupportedVariantError);
}
