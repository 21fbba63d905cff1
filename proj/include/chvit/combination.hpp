#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace chvit {

/// Nonempty, strictly increasing subset of the channel ids {0..C-1}.
class ChannelCombination {
 public:
  /// Throws InputError unless `indices` is nonempty, strictly increasing and below
  /// `source_channels`.
  ChannelCombination(std::vector<std::size_t> indices, std::size_t source_channels);

  /// All channels {0..C-1}.
  static ChannelCombination full(std::size_t source_channels);
  /// Sorts and deduplicates before validating.
  static ChannelCombination from_unsorted(std::vector<std::size_t> indices, std::size_t source_channels);

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t source_channels() const { return source_channels_; }
  std::size_t size() const { return indices_.size(); }
  bool contains(std::size_t channel) const;
  bool is_full() const { return indices_.size() == source_channels_; }

  /// Dash-joined ids, e.g. "0-2".
  std::string label() const;

  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  bool operator==(const ChannelCombination&) const = default;
  /// Orders by size first, then lexicographically.
  bool operator<(const ChannelCombination& other) const;

 private:
  std::vector<std::size_t> indices_;
  std::size_t source_channels_;
};

}  // namespace chvit
