#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "chvit/combination.hpp"
#include "chvit/dataset.hpp"
#include "chvit/model.hpp"

namespace chvit {

/// Largest channel count evaluate_all_combinations accepts (2^12 - 1 subsets).
inline constexpr std::size_t kMaxEvalChannels = 12;

struct CombinationScore {
  ChannelCombination combination;
  double value;  ///< accuracy, or gain in a GainReport
};

/// Mean and population standard deviation over all combinations of one size.
struct GroupStat {
  std::size_t m;
  double mean;
  double std;
  std::size_t count;
};

struct CombinationReport {
  std::size_t channels = 0;
  std::size_t n_eval = 0;
  std::vector<CombinationScore> entries;  ///< size, then lexicographic order
  std::vector<GroupStat> grouped;         ///< m = 1..C

  /// Throws InputError when the combination is not part of the report.
  double accuracy(const ChannelCombination& combination) const;
  const GroupStat& group(std::size_t m) const;
};

struct GainReport {
  std::vector<CombinationScore> entries;
  std::vector<GroupStat> grouped;
};

/// Groups scores by combination size; entries must be sorted by size.
std::vector<GroupStat> group_by_size(const std::vector<CombinationScore>& entries);

/// Fraction of images whose argmax prediction with `channels` matches the label.
double evaluate_accuracy(const ModelParams& params, const Dataset& data,
                         const ChannelCombination& channels, std::size_t threads = 1);

/// Accuracy for every nonempty channel subset. Refuses more than kMaxEvalChannels.
CombinationReport evaluate_all_combinations(const ModelParams& params, const Dataset& data,
                                            std::size_t threads = 1);

/// a - b per combination, grouped by size. Combination sets must match.
GainReport gain_report(const CombinationReport& a, const CombinationReport& b);

/// Accuracy per class with `channels`; classes without images get NaN.
std::vector<double> per_class_accuracy(const ModelParams& params, const Dataset& data,
                                       const ChannelCombination& channels, std::size_t threads = 1);

/// combination,m,accuracy
void write_combination_csv(const CombinationReport& report, const std::string& path);
/// m,mean,std,count
void write_grouped_csv(const std::vector<GroupStat>& grouped, const std::string& path);
/// combination,m,gain
void write_gain_csv(const GainReport& report, const std::string& path);
/// class,count,accuracy
void write_per_class_csv(const std::vector<double>& accuracy, const Dataset& data,
                         const std::string& path);

}  // namespace chvit
