#include "chvit/model.hpp"

#include <algorithm>
#include <array>
#include <optional>

#include "chvit/errors.hpp"

namespace chvit {

namespace {

constexpr std::array<std::string_view, 5> kVariantNames = {
    "channelvit_tied", "channelvit_untied", "channelvit_shared_chn", "vit", "multivit"};

std::string idx(std::string_view prefix, std::size_t i) {
  return std::string(prefix) + std::to_string(i);
}

Tensor trunc_normal(Shape shape, Rng& rng, double std = 0.02) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.truncated_normal(std);
  return t;
}

void add_encoder(ModelParams& p, const std::string& prefix, const ModelConfig& c, Rng& rng) {
  const std::size_t d = c.embed_dim;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string b = prefix + idx("blocks.", i) + ".";
    p.add(b + "ln1.g", Tensor({d}, 1.0), ParamKind::norm);
    p.add(b + "ln1.b", Tensor({d}), ParamKind::norm);
    p.add(b + "attn.wq", trunc_normal({d, d}, rng), ParamKind::weight);
    p.add(b + "attn.wk", trunc_normal({d, d}, rng), ParamKind::weight);
    p.add(b + "attn.wv", trunc_normal({d, d}, rng), ParamKind::weight);
    p.add(b + "attn.wo", trunc_normal({d, d}, rng), ParamKind::weight);
    p.add(b + "ln2.g", Tensor({d}, 1.0), ParamKind::norm);
    p.add(b + "ln2.b", Tensor({d}), ParamKind::norm);
    p.add(b + "mlp.w1", trunc_normal({d, c.mlp_hidden}, rng), ParamKind::weight);
    p.add(b + "mlp.b1", Tensor({c.mlp_hidden}), ParamKind::bias);
    p.add(b + "mlp.w2", trunc_normal({c.mlp_hidden, d}, rng), ParamKind::weight);
    p.add(b + "mlp.b2", Tensor({d}), ParamKind::bias);
  }
  p.add(prefix + "norm.g", Tensor({d}, 1.0), ParamKind::norm);
  p.add(prefix + "norm.b", Tensor({d}), ParamKind::norm);
}

void check_image(const ModelConfig& c, const MultiChannelImage& image) {
  if (image.channels != c.channels || image.height != c.image_h || image.width != c.image_w) {
    throw InputError("image is " + std::to_string(image.channels) + "x" +
                     std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " but the model expects " + std::to_string(c.channels) + "x" +
                     std::to_string(c.image_h) + "x" + std::to_string(c.image_w));
  }
}

void check_combination(const ModelConfig& c, const ChannelCombination& s) {
  if (s.source_channels() != c.channels) {
    throw InputError("channel combination " + s.label() + " is over " +
                     std::to_string(s.source_channels()) + " channels, model has " +
                     std::to_string(c.channels));
  }
}

Tensor channel_patches(const MultiChannelImage& image, std::size_t channel, std::size_t p) {
  const std::size_t grid_w = image.width / p;
  const std::size_t n = (image.height / p) * grid_w;
  Tensor out({n, p * p});
  for (std::size_t patch = 0; patch < n; ++patch) {
    const std::size_t y0 = (patch / grid_w) * p;
    const std::size_t x0 = (patch % grid_w) * p;
    for (std::size_t dy = 0; dy < p; ++dy) {
      for (std::size_t dx = 0; dx < p; ++dx) {
        out(patch, dy * p + dx) = image.at(channel, y0 + dy, x0 + dx);
      }
    }
  }
  return out;
}

Var mlp(Binding& b, Var x, const std::string& prefix) {
  Var h = gelu(add_row(matmul(x, b[prefix + "w1"]), b[prefix + "b1"]));
  return add_row(matmul(h, b[prefix + "w2"]), b[prefix + "b2"]);
}

/// Runs the blocks under `prefix` and returns the (normed, unless depth 0) CLS row.
Var encode_cls(Binding& b, Var h, const std::string& prefix, AttentionTrace* trace) {
  const ModelConfig& c = b.config();
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string blk = prefix + idx("blocks.", i) + ".";
    std::vector<Var>* record = nullptr;
    if (trace) record = &trace->blocks.emplace_back();
    Var normed = layer_norm(h, b[blk + "ln1.g"], b[blk + "ln1.b"]);
    h = add(h, multihead_attention(normed, b[blk + "attn.wq"], b[blk + "attn.wk"],
                                   b[blk + "attn.wv"], b[blk + "attn.wo"], c.heads, record));
    normed = layer_norm(h, b[blk + "ln2.g"], b[blk + "ln2.b"]);
    h = add(h, mlp(b, normed, blk + "mlp."));
  }
  Var cls = row(h, 0);
  if (c.depth == 0) return cls;
  return layer_norm(cls, b[prefix + "norm.g"], b[prefix + "norm.b"]);
}

/// Single-channel ViT embedding for MultiViT's per-channel towers.
Var embed_tower(Binding& b, const MultiChannelImage& image, std::size_t channel) {
  Graph& g = b.graph();
  const ModelConfig& c = b.config();
  const std::string pre = idx("tower.", channel) + ".";
  Var x = g.constant(channel_patches(image, channel, c.patch_size));
  Var body = add_row(add(b[pre + "pos"], matmul(x, b[pre + "patch.w"])), b[pre + "patch.b"]);
  const std::array<Var, 2> parts = {b[pre + "cls"], body};
  return concat_rows(parts);
}

}  // namespace

std::string_view variant_name(Variant v) { return kVariantNames.at(static_cast<std::size_t>(v)); }

Variant parse_variant(std::string_view name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == name) return static_cast<Variant>(i);
  }
  throw ConfigError("unknown model variant '" + std::string(name) +
                    "' (expected channelvit_tied, channelvit_untied, channelvit_shared_chn, vit "
                    "or multivit)");
}

bool is_channelvit(Variant v) {
  return v == Variant::channelvit_tied || v == Variant::channelvit_untied ||
         v == Variant::channelvit_shared_chn;
}

void ModelConfig::validate() const {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (image_h == 0 || image_w == 0) throw ConfigError("image dimensions must be positive");
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible into " + std::to_string(patch_size) + "x" +
                      std::to_string(patch_size) + " patches");
  }
  if (channels == 0) throw ConfigError("channels must be positive");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (static_cast<std::size_t>(variant) >= kVariantNames.size()) throw ConfigError("bad variant tag");
}

// ---------------------------------------------------------------------------
// ModelParams

Parameter& ModelParams::add(std::string name, Tensor value, ParamKind kind) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(value), Tensor{}, kind});
  return params_.back();
}

const Parameter* ModelParams::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ModelParams::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter& ModelParams::at(std::string_view name) const {
  if (const Parameter* p = find(name)) return *p;
  throw InputError("model has no parameter named " + std::string(name));
}

Parameter& ModelParams::at(std::string_view name) {
  if (Parameter* p = find(name)) return *p;
  throw InputError("model has no parameter named " + std::string(name));
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.size() != p.value.size()) {
      p.grad = Tensor(p.value.shape);
    } else {
      p.grad.fill(0.0);
    }
  }
}

ModelParams init_params(const ModelConfig& c, Rng& rng) {
  c.validate();
  ModelParams p(c);
  const std::size_t d = c.embed_dim;
  const std::size_t n = c.num_patches();
  const std::size_t pd = c.patch_dim();

  if (c.variant == Variant::multivit) {
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      const std::string pre = idx("tower.", ch) + ".";
      p.add(pre + "patch.w", trunc_normal({pd, d}, rng), ParamKind::weight);
      p.add(pre + "patch.b", Tensor({d}), ParamKind::bias);
      p.add(pre + "pos", trunc_normal({n, d}, rng), ParamKind::embedding);
      p.add(pre + "cls", trunc_normal({1, d}, rng), ParamKind::embedding);
      add_encoder(p, pre, c, rng);
    }
    p.add("head.w1", trunc_normal({d, d}, rng), ParamKind::weight);
    p.add("head.b1", Tensor({d}), ParamKind::bias);
    p.add("head.w2", Tensor({d, c.num_classes}), ParamKind::weight);
    p.add("head.b2", Tensor({c.num_classes}), ParamKind::bias);
    return p;
  }

  if (c.variant == Variant::channelvit_tied || c.variant == Variant::channelvit_shared_chn) {
    p.add("patch.w", trunc_normal({pd, d}, rng), ParamKind::weight);
  } else {
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      p.add(idx("patch.w.", ch), trunc_normal({pd, d}, rng), ParamKind::weight);
    }
  }
  if (c.variant == Variant::vit) {
    p.add("patch.b", Tensor({d}), ParamKind::bias);
  } else {
    p.add("chn", trunc_normal({c.channels, d}, rng), ParamKind::embedding);
  }
  p.add("pos", trunc_normal({n, d}, rng), ParamKind::embedding);
  p.add("cls", trunc_normal({1, d}, rng), ParamKind::embedding);
  add_encoder(p, "", c, rng);
  p.add("head.w", Tensor({d, c.num_classes}), ParamKind::weight);
  p.add("head.b", Tensor({c.num_classes}), ParamKind::bias);
  return p;
}

// ---------------------------------------------------------------------------
// Binding

Binding::Binding(Graph& graph, const ModelParams& params) : Binding(graph, params, nullptr) {}

Binding::Binding(Graph& graph, const ModelParams& params, ModelParams* sink)
    : graph_(&graph), params_(&params), sink_(sink) {}

Binding Binding::accumulating(Graph& graph, ModelParams& params) {
  return Binding(graph, params, &params);
}

Var Binding::operator[](const std::string& name) {
  if (auto it = leaves_.find(name); it != leaves_.end()) return it->second;
  const Parameter& p = params_->at(name);
  Tensor* sink = sink_ ? &sink_->at(name).grad : nullptr;
  Var v = graph_->parameter(p.value, sink);
  leaves_.emplace(name, v);
  return v;
}

// ---------------------------------------------------------------------------
// Embedding and forward

std::vector<Tensor> patchify(const MultiChannelImage& image, std::size_t p) {
  if (p == 0 || image.height % p != 0 || image.width % p != 0) {
    throw ConfigError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " is not divisible into " + std::to_string(p) + "x" + std::to_string(p) +
                      " patches");
  }
  std::vector<Tensor> out;
  out.reserve(image.channels);
  for (std::size_t c = 0; c < image.channels; ++c) out.push_back(channel_patches(image, c, p));
  return out;
}

TokenSequence embed_channelvit(Binding& b, const MultiChannelImage& image,
                               const ChannelCombination& channels) {
  const ModelConfig& c = b.config();
  if (!is_channelvit(c.variant)) {
    throw UnsupportedVariantError("embed_channelvit on a " + std::string(variant_name(c.variant)) +
                                  " model");
  }
  check_image(c, image);
  check_combination(c, channels);
  Graph& g = b.graph();
  const bool tied = c.variant != Variant::channelvit_untied;
  const std::size_t n = c.num_patches();

  TokenSequence seq;
  std::vector<Var> parts{b["cls"]};
  Var chn = b["chn"];
  Var pos = b["pos"];
  for (std::size_t ch : channels) {
    Var x = g.constant(channel_patches(image, ch, c.patch_size));
    Var w = tied ? b["patch.w"] : b[idx("patch.w.", ch)];
    parts.push_back(add(add_row(pos, row(chn, ch)), matmul(x, w)));
    for (std::size_t i = 0; i < n; ++i) {
      seq.channel_of_token.push_back(ch);
      seq.patch_of_token.push_back(i);
    }
  }
  seq.tokens = concat_rows(parts);
  return seq;
}

TokenSequence embed_vit(Binding& b, const MultiChannelImage& image,
                        const ChannelCombination& channels) {
  const ModelConfig& c = b.config();
  if (c.variant != Variant::vit) {
    throw UnsupportedVariantError("embed_vit on a " + std::string(variant_name(c.variant)) + " model");
  }
  check_image(c, image);
  check_combination(c, channels);
  Graph& g = b.graph();
  const double rescale = static_cast<double>(c.channels) / static_cast<double>(channels.size());

  std::optional<Var> content;
  for (std::size_t ch : channels) {
    Tensor x = channel_patches(image, ch, c.patch_size);
    for (double& v : x.data) v *= rescale;
    Var term = matmul(g.constant(std::move(x)), b[idx("patch.w.", ch)]);
    content = content ? add(*content, term) : term;
  }
  TokenSequence seq;
  Var body = add_row(add(b["pos"], *content), b["patch.b"]);
  const std::array<Var, 2> parts = {b["cls"], body};
  seq.tokens = concat_rows(parts);
  seq.channel_of_token.assign(c.num_patches(), kAllChannels);
  for (std::size_t i = 0; i < c.num_patches(); ++i) seq.patch_of_token.push_back(i);
  return seq;
}

TokenSequence embed(Binding& b, const MultiChannelImage& image, const ChannelCombination& channels) {
  const Variant v = b.config().variant;
  if (v == Variant::vit) return embed_vit(b, image, channels);
  if (is_channelvit(v)) return embed_channelvit(b, image, channels);
  throw UnsupportedVariantError("multivit has no single token sequence");
}

Var forward(Binding& b, const TokenSequence& tokens, AttentionTrace* trace) {
  Var cls = encode_cls(b, tokens.tokens, "", trace);
  return add_row(matmul(cls, b["head.w"]), b["head.b"]);
}

Var forward_multivit(Binding& b, const MultiChannelImage& image, const ChannelCombination& channels) {
  const ModelConfig& c = b.config();
  if (c.variant != Variant::multivit) {
    throw UnsupportedVariantError("forward_multivit on a " + std::string(variant_name(c.variant)) +
                                  " model");
  }
  check_image(c, image);
  check_combination(c, channels);
  std::vector<Var> towers;
  for (std::size_t ch : channels) {
    towers.push_back(encode_cls(b, embed_tower(b, image, ch), idx("tower.", ch) + ".", nullptr));
  }
  Var pooled = towers.size() == 1 ? towers.front() : mean_rows(concat_rows(towers));
  Var hidden = gelu(add_row(matmul(pooled, b["head.w1"]), b["head.b1"]));
  return add_row(matmul(hidden, b["head.w2"]), b["head.b2"]);
}

Var model_logits(Binding& b, const MultiChannelImage& image, const ChannelCombination& channels,
                 AttentionTrace* trace) {
  if (b.config().variant == Variant::multivit) return forward_multivit(b, image, channels);
  return forward(b, embed(b, image, channels), trace);
}

std::vector<double> predict_logits(const ModelParams& params, const MultiChannelImage& image,
                                   const ChannelCombination& channels) {
  Graph g(false);
  Binding b(g, params);
  return model_logits(b, image, channels).value().data;
}

std::size_t argmax(std::span<const double> logits) {
  if (logits.empty()) throw InputError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

ModelParams shared_channel_embedding_eval(const ModelParams& params) {
  if (!is_channelvit(params.config().variant)) {
    throw UnsupportedVariantError("shared channel embeddings need a ChannelViT, got " +
                                  std::string(variant_name(params.config().variant)));
  }
  ModelParams out = params;
  Tensor& chn = out.at("chn").value;
  const std::size_t rows = chn.rows();
  const std::size_t d = chn.cols();
  std::vector<double> mean(d, 0.0);
  // Incremental mean: exact when all rows are already equal.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] += (chn(r, j) - mean[j]) / static_cast<double>(r + 1);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) std::copy(mean.begin(), mean.end(), chn.row(r).begin());
  // The shared tag implies the tied layout; untied models keep their own tag.
  if (params.config().variant != Variant::channelvit_untied) out.set_variant(Variant::channelvit_shared_chn);
  return out;
}

}  // namespace chvit
