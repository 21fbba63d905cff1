#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "chvit/combination.hpp"
#include "chvit/rng.hpp"

namespace chvit {

enum class SamplerMode : std::uint8_t { none, hcs, dropout };

std::string_view sampler_mode_name(SamplerMode m);
SamplerMode parse_sampler_mode(std::string_view name);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::hcs;
  double dropout_rate = 0.5;  ///< dropout mode only; must lie in [0, 1)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Hierarchical channel sampling: m ~ U{1..C}, then a uniform m-subset.
ChannelCombination hcs_sample(std::size_t channels, Rng& rng);

/// Keeps each channel with probability 1 - p; all-dropped draws are redrawn.
ChannelCombination dropout_sample(std::size_t channels, double p, Rng& rng);

/// Exact law of |S| for the configured sampler; element m-1 holds P(|S| = m).
std::vector<double> exact_size_distribution(const SamplerConfig& config, std::size_t channels);

/// All C-choose-m subsets in lexicographic order.
std::vector<ChannelCombination> enumerate_combinations(std::size_t channels, std::size_t m);

/// Every nonempty subset, ordered by size then lexicographically.
std::vector<ChannelCombination> enumerate_all_combinations(std::size_t channels);

std::uint64_t binomial(std::size_t n, std::size_t k);

/// Owns its generator; draws one combination per call. Not shareable across threads;
/// use split() for worker streams.
class ChannelSampler {
 public:
  explicit ChannelSampler(SamplerConfig config);
  ChannelSampler(SamplerConfig config, Rng rng);

  /// Draw over all `channels` channels.
  ChannelCombination draw(std::size_t channels);
  /// Draw restricted to the `available` channel ids of a `channels`-wide space.
  ChannelCombination draw(std::span<const std::size_t> available, std::size_t channels);

  ChannelSampler split();
  const SamplerConfig& config() const { return config_; }
  const Rng& rng() const { return rng_; }

 private:
  SamplerConfig config_;
  Rng rng_;
};

}  // namespace chvit
