#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "chvit/image.hpp"
#include "chvit/model.hpp"
#include "chvit/tensor.hpp"

namespace chvit {

inline constexpr std::uint16_t kDatasetVersion = 1;

/// Labelled multi-channel images sharing one geometry and channel naming.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> channel_names;
  std::vector<MultiChannelImage> images;
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return images.size(); }
  /// Throws InputError if geometry, names or labels are inconsistent.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

/// "MCDS", u16 version, u32 C/H/W/K/count, C channel names, then per sample a u16
/// label and C*H*W little-endian f32 pixels.
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

enum class InfoMode : std::uint8_t {
  redundant,      ///< the class pattern is replicated in every channel
  complementary,  ///< group g carries bit g of the class; K must be 2^groups
  single,         ///< only group 0 carries the class pattern
};

std::string_view info_mode_name(InfoMode m);
InfoMode parse_info_mode(std::string_view name);

/// Synthetic generator settings.
///
/// Each pixel's channel vector is a correlated Gaussian background (unit variance;
/// correlation rho_in inside a channel group, rho_out across groups) plus an
/// oriented sinusoidal stripe pattern that encodes the label. Stripes have random
/// phase, are shared by every channel of the group that carries them, and their
/// orientation is the label information:
///  - redundant/single: class y uses angle pi*y/K;
///  - complementary: bit g of y picks horizontal (0) or vertical (1) stripes in group g.
/// Channel c is finally mapped to gain_c * (background + stripes) + offset_c plus
/// independent N(0, noise_std^2) noise.
struct SynthConfig {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 4;
  std::size_t train_samples = 1000;
  std::size_t test_samples = 500;
  /// Group id per channel (ids 0..G-1, each used); empty puts every channel in group 0.
  std::vector<std::size_t> groups;
  double rho_in = 0.5;
  double rho_out = 0.0;
  InfoMode info_mode = InfoMode::redundant;
  double noise_std = 0.0;
  double signal = 1.0;
  double stripe_period = 4.0;
  std::vector<double> channel_offsets;
  std::vector<double> channel_gains;
  std::uint64_t seed = 0;

  std::vector<std::size_t> resolved_groups() const;
  std::size_t num_groups() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Target background correlation matrix [C, C] implied by the groups and rho values.
Tensor target_correlation(const SynthConfig& config);

/// Lower-triangular L with L L^T = R; tolerates exactly-singular PSD matrices.
/// Throws ConfigError naming the matrix when R is not PSD.
Tensor psd_cholesky(const Tensor& r, std::string_view name);

struct SynthSplit {
  Dataset data;
  /// Per-sample per-group latent: the stripe orientation index that group carries
  /// (class id for redundant/single, bit for complementary; 0 for uninformative groups).
  std::vector<std::vector<std::uint8_t>> latents;
};

struct SynthData {
  SynthSplit train;
  SynthSplit test;
};

/// Deterministic in (config, seed).
SynthData generate(const SynthConfig& config);

/// Pearson correlation across channels of every pixel of every sample: [C, C].
Tensor channel_pixel_correlation(const Dataset& ds);

/// Pearson correlation between rows of `rows` (each row one variable).
Tensor pearson_rows(const Tensor& rows);

/// Correlation of the learned channel embeddings of a ChannelViT: [C, C].
Tensor channel_embedding_correlation(const ModelParams& params);

}  // namespace chvit
