#include "chvit/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "chvit/errors.hpp"

namespace chvit {

// ---------------------------------------------------------------------------
// ChannelCombination

ChannelCombination::ChannelCombination(std::vector<std::size_t> indices, std::size_t source_channels)
    : indices_(std::move(indices)), source_channels_(source_channels) {
  if (indices_.empty()) throw InputError("channel combination must be nonempty");
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] >= source_channels_) {
      throw InputError("channel " + std::to_string(indices_[i]) + " outside [0, " +
                       std::to_string(source_channels_) + ")");
    }
    if (i > 0 && indices_[i] <= indices_[i - 1]) {
      throw InputError("channel combination must be strictly increasing");
    }
  }
}

ChannelCombination ChannelCombination::full(std::size_t source_channels) {
  std::vector<std::size_t> all(source_channels);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return {std::move(all), source_channels};
}

ChannelCombination ChannelCombination::from_unsorted(std::vector<std::size_t> indices,
                                                     std::size_t source_channels) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  return {std::move(indices), source_channels};
}

bool ChannelCombination::contains(std::size_t channel) const {
  return std::binary_search(indices_.begin(), indices_.end(), channel);
}

std::string ChannelCombination::label() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < indices_.size(); ++i) os << (i ? "-" : "") << indices_[i];
  return os.str();
}

bool ChannelCombination::operator<(const ChannelCombination& other) const {
  if (indices_.size() != other.indices_.size()) return indices_.size() < other.indices_.size();
  return indices_ < other.indices_;
}

// ---------------------------------------------------------------------------
// Samplers

std::string_view sampler_mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::none: return "none";
    case SamplerMode::hcs: return "hcs";
    case SamplerMode::dropout: return "dropout";
  }
  return "?";
}

SamplerMode parse_sampler_mode(std::string_view name) {
  if (name == "none") return SamplerMode::none;
  if (name == "hcs") return SamplerMode::hcs;
  if (name == "dropout") return SamplerMode::dropout;
  throw ConfigError("unknown sampler mode '" + std::string(name) + "' (expected none, hcs or dropout)");
}

void SamplerConfig::validate() const {
  if (mode == SamplerMode::dropout && !(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
}

namespace {

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

ChannelCombination hcs_from(std::span<const std::size_t> available, std::size_t channels, Rng& rng) {
  if (available.empty()) throw InputError("hcs_sample needs at least one channel");
  const std::size_t m = 1 + static_cast<std::size_t>(rng.uniform_int(available.size()));
  std::vector<std::size_t> pool(available.begin(), available.end());
  // Partial Fisher-Yates: the first m slots become a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  return ChannelCombination::from_unsorted(std::move(pool), channels);
}

ChannelCombination dropout_from(std::span<const std::size_t> available, std::size_t channels,
                                double p, Rng& rng) {
  if (available.empty()) throw InputError("dropout_sample needs at least one channel");
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
  std::vector<std::size_t> kept;
  do {
    kept.clear();
    for (std::size_t c : available) {
      if (rng.uniform() >= p) kept.push_back(c);
    }
  } while (kept.empty());
  return ChannelCombination::from_unsorted(std::move(kept), channels);
}

}  // namespace

ChannelCombination hcs_sample(std::size_t channels, Rng& rng) {
  if (channels == 0) throw InputError("hcs_sample needs at least one channel");
  const auto ids = iota_ids(channels);
  return hcs_from(ids, channels, rng);
}

ChannelCombination dropout_sample(std::size_t channels, double p, Rng& rng) {
  if (channels == 0) throw InputError("dropout_sample needs at least one channel");
  const auto ids = iota_ids(channels);
  return dropout_from(ids, channels, p, rng);
}

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::vector<double> exact_size_distribution(const SamplerConfig& config, std::size_t channels) {
  config.validate();
  if (channels == 0) throw InputError("size distribution needs at least one channel");
  std::vector<double> probs(channels, 0.0);
  switch (config.mode) {
    case SamplerMode::none:
      probs.back() = 1.0;
      break;
    case SamplerMode::hcs:
      std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(channels));
      break;
    case SamplerMode::dropout: {
      const double p = config.dropout_rate;
      const double keep = 1.0 - p;
      const double nonempty = 1.0 - std::pow(p, static_cast<double>(channels));
      for (std::size_t m = 1; m <= channels; ++m) {
        probs[m - 1] = static_cast<double>(binomial(channels, m)) *
                       std::pow(keep, static_cast<double>(m)) *
                       std::pow(p, static_cast<double>(channels - m)) / nonempty;
      }
      break;
    }
  }
  return probs;
}

std::vector<ChannelCombination> enumerate_combinations(std::size_t channels, std::size_t m) {
  if (m < 1 || m > channels) {
    throw InputError("combination size " + std::to_string(m) + " outside [1, " +
                     std::to_string(channels) + "]");
  }
  std::vector<ChannelCombination> out;
  out.reserve(binomial(channels, m));
  std::vector<std::size_t> current(m);
  std::iota(current.begin(), current.end(), std::size_t{0});
  while (true) {
    out.emplace_back(current, channels);
    // Advance to the next lexicographic m-subset.
    std::size_t i = m;
    while (i > 0 && current[i - 1] == channels - m + (i - 1)) --i;
    if (i == 0) break;
    ++current[i - 1];
    for (std::size_t j = i; j < m; ++j) current[j] = current[j - 1] + 1;
  }
  return out;
}

std::vector<ChannelCombination> enumerate_all_combinations(std::size_t channels) {
  std::vector<ChannelCombination> out;
  for (std::size_t m = 1; m <= channels; ++m) {
    auto level = enumerate_combinations(channels, m);
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

ChannelSampler::ChannelSampler(SamplerConfig config) : ChannelSampler(config, Rng(config.seed)) {}

ChannelSampler::ChannelSampler(SamplerConfig config, Rng rng) : config_(config), rng_(rng) {
  config_.validate();
}

ChannelCombination ChannelSampler::draw(std::size_t channels) {
  const auto ids = iota_ids(channels);
  return draw(ids, channels);
}

ChannelCombination ChannelSampler::draw(std::span<const std::size_t> available, std::size_t channels) {
  switch (config_.mode) {
    case SamplerMode::none:
      return ChannelCombination::from_unsorted({available.begin(), available.end()}, channels);
    case SamplerMode::hcs:
      return hcs_from(available, channels, rng_);
    case SamplerMode::dropout:
      return dropout_from(available, channels, config_.dropout_rate, rng_);
  }
  throw ConfigError("bad sampler mode");
}

ChannelSampler ChannelSampler::split() { return ChannelSampler(config_, rng_.split()); }

}  // namespace chvit
