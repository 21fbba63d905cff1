#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chvit/config.hpp"
#include "chvit/evaluation.hpp"
#include "chvit/manifest.hpp"

namespace chvit {

/// Canned experiments on small synthetic configs. Each trains and evaluates seeded
/// models and reports directional checks.
struct RecipeOptions {
  std::string out_dir;       ///< empty: nothing is written
  std::size_t threads = 1;
  std::size_t seeds = 0;     ///< 0: the recipe's default number of seeds
  std::uint64_t base_seed = 0;
};

struct RecipeCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RecipeResult {
  std::string recipe;
  std::vector<RecipeCheck> checks;
  std::vector<std::string> outputs;

  bool passed() const;
};

const std::vector<std::string>& recipe_names();

/// Runs one recipe. Every stage is recorded in `manifest` when given; a throwing
/// stage is recorded as failed and rethrown.
RecipeResult run_recipe(std::string_view name, const RecipeOptions& options,
                        RunManifest* manifest = nullptr);

// Building blocks shared with the acceptance checks.

/// Synthetic data + model settings of a recipe for one seed and model tag.
RunConfig recipe_config(std::string_view recipe, std::string_view model, std::uint64_t seed);

struct TrainedRun {
  RunConfig config;
  ModelParams params;
  CombinationReport report;
  std::vector<LogRow> log;
};

/// Trains on the train split and evaluates every channel combination on the test split.
TrainedRun train_and_evaluate(const RunConfig& config, const SynthData& data, std::size_t threads);

/// One seeded run of the single-informative-channel task.
struct RelevanceTrial {
  std::vector<double> channel_relevance;  ///< gradient relevance summed over test images
  std::size_t top_channel = 0;
  double accuracy = 0.0;
  double max_rollout_row_error = 0.0;     ///< worst |row sum - 1| over all rollouts
};
RelevanceTrial relevance_trial(std::uint64_t seed, std::size_t threads = 1);

/// One seeded run on data whose channels 0 and 1 are exact duplicates.
struct EmbeddingTrial {
  Tensor correlation;
  ModelParams params;

  bool duplicate_pair_wins() const;
};
EmbeddingTrial embedding_trial(std::uint64_t seed);

/// Upper-tail chi-square p-value of observed counts against cell probabilities.
double chi_square_pvalue(std::span<const std::size_t> observed, std::span<const double> expected_prob);

}  // namespace chvit
