#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "chvit/combination.hpp"
#include "chvit/image.hpp"
#include "chvit/model.hpp"
#include "chvit/tensor.hpp"

namespace chvit {

enum class RelevanceMethod : std::uint8_t { rollout, grad };

std::string_view relevance_method_name(RelevanceMethod m);
RelevanceMethod parse_relevance_method(std::string_view name);

/// Attention probabilities of one forward pass as plain values: [block][head] -> [L, L].
using AttentionStack = std::vector<std::vector<Tensor>>;

AttentionStack attention_values(const AttentionTrace& trace);

/// Head-averaged attention with the residual folded in, 0.5 (A + I), rows renormalized,
/// multiplied over blocks in order. Throws StateError when nothing was recorded.
Tensor attention_rollout(const AttentionStack& attention);

/// Gradient-weighted propagation: R = I, then per block R += mean_h(clamp(dA_h * A_h, 0)) R.
/// `gradients` holds d(target logit)/dA for every recorded matrix.
Tensor gradient_relevance(const AttentionStack& attention, const AttentionStack& gradients);

/// Attribution of one image's tokens for one target class.
struct RelevanceMap {
  ChannelCombination combination;
  std::size_t target_class = 0;
  std::size_t grid_h = 0;  ///< patch grid rows
  std::size_t grid_w = 0;
  /// [|S|, N] for ChannelViT (row r is channel combination.indices()[r]); [1, N] for ViT.
  Tensor raw;
  /// raw / max(raw); all zeros when raw is all zero.
  Tensor normalized;
  /// True when rows are channels (ChannelViT); false for the single ViT row.
  bool per_channel = false;

  /// Sum of raw relevance per row.
  std::vector<double> row_sums() const;
};

/// Relevance of the CLS token's view of every patch token. MultiViT is unsupported.
RelevanceMap compute_relevance(const ModelParams& params, const MultiChannelImage& image,
                               const ChannelCombination& channels, std::size_t target_class,
                               RelevanceMethod method);

struct ChannelRelevanceSummary {
  std::vector<std::size_t> classes;   ///< classes that had at least one image
  Tensor matrix;                      ///< [classes.size(), C]
  std::vector<std::string> warnings;  ///< one per omitted class
};

/// Per class and channel: mean over that class's images of the channel's maximum
/// normalized relevance, all channels active, target = the image's label.
ChannelRelevanceSummary channel_relevance_summary(const ModelParams& params,
                                                  const std::vector<MultiChannelImage>& images,
                                                  const std::vector<std::size_t>& labels,
                                                  RelevanceMethod method, std::size_t threads = 1);

/// Nearest-neighbour upsampling of a [gh, gw] grid by `factor` in both directions.
Tensor upsample_nearest(const Tensor& grid, std::size_t factor);

/// Binary 8-bit PGM; values are clamped to [0, 1] and scaled to 0..255.
std::string encode_pgm(const Tensor& image);
void write_pgm(const Tensor& image, const std::string& path);

/// channel,patch,row,col,raw,normalized
std::string relevance_csv(const RelevanceMap& map);

}  // namespace chvit
