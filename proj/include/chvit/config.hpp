#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chvit/dataset.hpp"
#include "chvit/training.hpp"

namespace chvit {

/// Everything a run can be configured with. One flat key=value namespace covers the
/// model, schedule, sampler, trainer and synthetic-data settings.
struct RunConfig {
  TrainConfig train;
  SynthConfig synth;          ///< channels/size/classes mirror train.model at resolve time
  std::string data;           ///< training dataset file; empty -> generate from synth keys
  std::string test_data;      ///< evaluation dataset file
  std::string partial_data;   ///< optional second dataset observing a channel prefix
  MixedObjective mixed_objective = MixedObjective::average;
  std::size_t threads = 1;
  std::optional<std::uint64_t> sampler_seed;  ///< defaults to seed
  std::optional<std::uint64_t> data_seed;     ///< defaults to seed

  /// Copies shared fields into train/synth and fills derived seeds.
  void resolve();
};

/// Key, current value and a one-line description for every accepted key.
struct ConfigKey {
  std::string name;
  std::string description;
};
const std::vector<ConfigKey>& config_keys();

/// Applies one assignment. Unknown keys raise ConfigError naming the nearest valid key.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Key=value text: '#' starts a comment, blank lines are ignored, a key may appear once.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                  std::string_view source);

/// Defaults, then the file (if any), then `overrides` in order; resolved and validated.
RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

/// Every key with its resolved value, one per line, in schema order.
std::string format_run_config(const RunConfig& config);

/// Edit distance used for key suggestions.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// Closest valid key to `key`.
std::string nearest_key(std::string_view key);

}  // namespace chvit
