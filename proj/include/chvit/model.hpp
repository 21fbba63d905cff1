#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chvit/combination.hpp"
#include "chvit/image.hpp"
#include "chvit/rng.hpp"
#include "chvit/tensor.hpp"

namespace chvit {

enum class Variant : std::uint8_t {
  channelvit_tied = 0,
  channelvit_untied = 1,
  channelvit_shared_chn = 2,
  vit = 3,
  multivit = 4,
};

std::string_view variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);
/// True for the variants that emit one token per (channel, patch).
bool is_channelvit(Variant v);

struct ModelConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 256;
  std::size_t num_classes = 4;
  Variant variant = Variant::channelvit_tied;

  std::size_t num_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size; }
  /// Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// How the optimizer treats a parameter; weight decay keys off this.
enum class ParamKind : std::uint8_t { weight, bias, norm, embedding };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamKind kind = ParamKind::weight;
};

/// Every learnable array of one model, in a fixed creation order.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelConfig config) : config_(config) {}

  const ModelConfig& config() const { return config_; }
  void set_variant(Variant v) { config_.variant = v; }

  Parameter& add(std::string name, Tensor value, ParamKind kind);
  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);
  /// Throws InputError when absent.
  const Parameter& at(std::string_view name) const;
  Parameter& at(std::string_view name);

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  /// Total number of scalars.
  std::size_t count() const;
  void zero_grad();

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Freshly initialized parameters: truncated normal (std 0.02) projections and
/// embeddings; zero biases and classifier weights; unit layer-norm gains.
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// Exposes a ModelParams as graph leaves, created on first use.
class Binding {
 public:
  /// Inference binding; parameter gradients are not exported.
  Binding(Graph& graph, const ModelParams& params);
  /// Parameter leaves accumulate their gradients into `params`' grad buffers.
  static Binding accumulating(Graph& graph, ModelParams& params);

  Var operator[](const std::string& name);
  Graph& graph() { return *graph_; }
  const ModelParams& params() const { return *params_; }
  const ModelConfig& config() const { return params_->config(); }

 private:
  Binding(Graph& graph, const ModelParams& params, ModelParams* sink);

  Graph* graph_;
  const ModelParams* params_;
  ModelParams* sink_ = nullptr;
  std::unordered_map<std::string, Var> leaves_;
};

/// Token id reserved for ViT tokens, which mix every active channel.
inline constexpr std::size_t kAllChannels = std::numeric_limits<std::size_t>::max();

/// Encoder input. The index maps cover the non-CLS tokens, in sequence order.
struct TokenSequence {
  Var tokens;
  std::vector<std::size_t> channel_of_token;
  std::vector<std::size_t> patch_of_token;

  std::size_t length() const { return channel_of_token.size() + 1; }
};

/// Attention probabilities recorded during a forward pass: [block][head] -> [L, L].
struct AttentionTrace {
  std::vector<std::vector<Var>> blocks;
};

/// Splits each channel into N = HW/P^2 patches ([N, P^2] per channel), patches in
/// row-major grid order and pixels row-major within a patch.
std::vector<Tensor> patchify(const MultiChannelImage& image, std::size_t patch_size);

/// CLS followed by pos_n + chn_c + W x[c, p_n] for every c in S (channel-major).
TokenSequence embed_channelvit(Binding& params, const MultiChannelImage& image,
                               const ChannelCombination& channels);

/// CLS followed by pos_n + sum_{c in S} W_c (C/|S|) x[c, p_n] + b.
TokenSequence embed_vit(Binding& params, const MultiChannelImage& image,
                        const ChannelCombination& channels);

/// Dispatches on the variant; MultiViT has no single token sequence.
TokenSequence embed(Binding& params, const MultiChannelImage& image,
                    const ChannelCombination& channels);

/// Pre-norm encoder followed by final layer norm (skipped at depth 0) and the linear
/// head on CLS. Returns logits [1, K].
Var forward(Binding& params, const TokenSequence& tokens, AttentionTrace* trace = nullptr);

/// One single-channel ViT per active channel; CLS outputs averaged, then an MLP head.
Var forward_multivit(Binding& params, const MultiChannelImage& image,
                     const ChannelCombination& channels);

/// Full pipeline for any variant. `trace` is ignored for MultiViT.
Var model_logits(Binding& params, const MultiChannelImage& image,
                 const ChannelCombination& channels, AttentionTrace* trace = nullptr);

/// Inference convenience: logits as a plain vector.
std::vector<double> predict_logits(const ModelParams& params, const MultiChannelImage& image,
                                   const ChannelCombination& channels);

/// Argmax with ties broken towards the lowest class id.
std::size_t argmax(std::span<const double> logits);

/// Copy of a ChannelViT's parameters with every channel embedding replaced by
/// their mean. A tied model's copy is tagged channelvit_shared_chn; an untied model's
/// copy keeps its variant.
ModelParams shared_channel_embedding_eval(const ModelParams& params);

}  // namespace chvit
