#include "chvit/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "chvit/binary_io.hpp"
#include "chvit/errors.hpp"
#include "chvit/parallel.hpp"

namespace chvit {

std::string_view relevance_method_name(RelevanceMethod m) {
  return m == RelevanceMethod::rollout ? "rollout" : "grad";
}

RelevanceMethod parse_relevance_method(std::string_view name) {
  if (name == "rollout") return RelevanceMethod::rollout;
  if (name == "grad") return RelevanceMethod::grad;
  throw ConfigError("unknown relevance method '" + std::string(name) + "' (rollout, grad)");
}

AttentionStack attention_values(const AttentionTrace& trace) {
  AttentionStack out;
  for (const auto& block : trace.blocks) {
    auto& heads = out.emplace_back();
    for (const Var& a : block) heads.push_back(a.value());
  }
  return out;
}

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor product(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * b(p, j);
    }
  }
  return out;
}

std::size_t check_stack(const AttentionStack& attention) {
  if (attention.empty() || attention.front().empty()) {
    throw StateError("no attention was recorded for this forward pass");
  }
  const std::size_t L = attention.front().front().rows();
  for (const auto& block : attention) {
    if (block.empty()) throw StateError("a block recorded no attention heads");
    for (const auto& a : block) {
      if (a.rank() != 2 || a.rows() != L || a.cols() != L) {
        throw DimensionError("attention matrices must all be [" + std::to_string(L) + ", " +
                             std::to_string(L) + "], got " + shape_str(a.shape));
      }
    }
  }
  return L;
}

}  // namespace

Tensor attention_rollout(const AttentionStack& attention) {
  const std::size_t L = check_stack(attention);
  Tensor rollout = identity(L);
  for (const auto& block : attention) {
    Tensor a({L, L});
    for (const auto& h : block) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += h[i];
    }
    const double inv = 1.0 / static_cast<double>(block.size());
    for (std::size_t r = 0; r < L; ++r) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < L; ++c) {
        a(r, c) = 0.5 * (a(r, c) * inv + (r == c ? 1.0 : 0.0));
        row_sum += a(r, c);
      }
      for (std::size_t c = 0; c < L; ++c) a(r, c) /= row_sum;
    }
    rollout = product(a, rollout);
  }
  return rollout;
}

Tensor gradient_relevance(const AttentionStack& attention, const AttentionStack& gradients) {
  const std::size_t L = check_stack(attention);
  if (gradients.size() != attention.size()) {
    throw DimensionError("attention and gradient stacks differ in depth");
  }
  Tensor r = identity(L);
  for (std::size_t b = 0; b < attention.size(); ++b) {
    if (gradients[b].size() != attention[b].size()) {
      throw DimensionError("attention and gradient stacks differ in head count");
    }
    Tensor a({L, L});
    for (std::size_t h = 0; h < attention[b].size(); ++h) {
      const Tensor& att = attention[b][h];
      const Tensor& grad = gradients[b][h];
      if (grad.size() != att.size()) throw DimensionError("gradient shape differs from attention");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += std::max(0.0, att[i] * grad[i]);
    }
    const double inv = 1.0 / static_cast<double>(attention[b].size());
    for (double& v : a.data) v *= inv;
    const Tensor update = product(a, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += update[i];
  }
  return r;
}

std::vector<double> RelevanceMap::row_sums() const {
  std::vector<double> out(raw.rows(), 0.0);
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    for (double v : raw.row(r)) out[r] += v;
  }
  return out;
}

RelevanceMap compute_relevance(const ModelParams& params, const MultiChannelImage& image,
                               const ChannelCombination& channels, std::size_t target_class,
                               RelevanceMethod method) {
  const ModelConfig& cfg = params.config();
  if (cfg.variant == Variant::multivit) {
    throw UnsupportedVariantError("relevance maps need a single token sequence; multivit has one per channel");
  }
  if (target_class >= cfg.num_classes) {
    throw InputError("target class " + std::to_string(target_class) + " out of range for " +
                     std::to_string(cfg.num_classes) + " classes");
  }
  Graph g(method == RelevanceMethod::grad);
  Binding b(g, params);
  const TokenSequence tokens = embed(b, image, channels);
  AttentionTrace trace;
  const Var logits = forward(b, tokens, &trace);
  const std::size_t L = tokens.length();

  Tensor r;
  if (trace.blocks.empty()) {
    r = identity(L);
  } else if (method == RelevanceMethod::rollout) {
    r = attention_rollout(attention_values(trace));
  } else {
    Tensor seed(logits.shape());
    seed[target_class] = 1.0;
    g.backward(logits, seed);
    AttentionStack grads;
    for (const auto& block : trace.blocks) {
      auto& heads = grads.emplace_back();
      for (const Var& a : block) heads.push_back(g.grad(a));
    }
    r = gradient_relevance(attention_values(trace), grads);
  }

  RelevanceMap map{channels, target_class, cfg.image_h / cfg.patch_size,
                   cfg.image_w / cfg.patch_size, {}, {}, is_channelvit(cfg.variant)};
  const std::size_t N = cfg.num_patches();
  const bool per_channel = map.per_channel;
  map.raw = Tensor({per_channel ? channels.size() : 1, N});
  const auto& idx = channels.indices();
  for (std::size_t t = 0; t + 1 < L; ++t) {
    std::size_t row = 0;
    if (per_channel) {
      row = static_cast<std::size_t>(
          std::lower_bound(idx.begin(), idx.end(), tokens.channel_of_token[t]) - idx.begin());
    }
    map.raw(row, tokens.patch_of_token[t]) = std::max(0.0, r(0, t + 1));
  }
  const double peak = *std::max_element(map.raw.data.begin(), map.raw.data.end());
  map.normalized = map.raw;
  if (peak > 0.0) {
    for (double& v : map.normalized.data) v /= peak;
  }
  return map;
}

ChannelRelevanceSummary channel_relevance_summary(const ModelParams& params,
                                                  const std::vector<MultiChannelImage>& images,
                                                  const std::vector<std::size_t>& labels,
                                                  RelevanceMethod method, std::size_t threads) {
  const ModelConfig& cfg = params.config();
  if (!is_channelvit(cfg.variant)) {
    throw UnsupportedVariantError("per-channel relevance needs a ChannelViT, got " +
                                  std::string(variant_name(cfg.variant)));
  }
  if (images.size() != labels.size()) throw InputError("images and labels differ in length");
  const std::size_t C = cfg.channels;
  const std::size_t K = cfg.num_classes;
  const auto full = ChannelCombination::full(C);

  std::vector<std::vector<double>> maxima(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const RelevanceMap map = compute_relevance(params, images[i], full, labels[i], method);
    auto& m = maxima[i];
    m.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      const auto row = map.normalized.row(c);
      m[c] = *std::max_element(row.begin(), row.end());
    }
  });

  ChannelRelevanceSummary out;
  std::vector<double> acc(K * C, 0.0);
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ++count[labels[i]];
    for (std::size_t c = 0; c < C; ++c) acc[labels[i] * C + c] += maxima[i][c];
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (count[k] == 0) {
      out.warnings.push_back("class " + std::to_string(k) + " has no images; row omitted");
    } else {
      out.classes.push_back(k);
    }
  }
  out.matrix = Tensor({out.classes.size(), C});
  for (std::size_t r = 0; r < out.classes.size(); ++r) {
    const std::size_t k = out.classes[r];
    for (std::size_t c = 0; c < C; ++c) {
      out.matrix(r, c) = acc[k * C + c] / static_cast<double>(count[k]);
    }
  }
  return out;
}

Tensor upsample_nearest(const Tensor& grid, std::size_t factor) {
  if (grid.rank() != 2) throw DimensionError("upsample needs a 2-D grid, got " + shape_str(grid.shape));
  if (factor == 0) throw ConfigError("upsample factor must be >= 1");
  const std::size_t h = grid.rows(), w = grid.cols();
  Tensor out({h * factor, w * factor});
  for (std::size_t y = 0; y < h * factor; ++y) {
    for (std::size_t x = 0; x < w * factor; ++x) out(y, x) = grid(y / factor, x / factor);
  }
  return out;
}

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("PGM needs a 2-D image, got " + shape_str(image.shape));
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (double v : image.data) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

void write_pgm(const Tensor& image, const std::string& path) {
  binary::write_file_atomic(path, encode_pgm(image));
}

std::string relevance_csv(const RelevanceMap& map) {
  std::ostringstream out;
  out << "channel,patch,row,col,raw,normalized\n";
  char buf[64];
  for (std::size_t r = 0; r < map.raw.rows(); ++r) {
    const std::string channel =
        map.per_channel ? std::to_string(map.combination.indices()[r]) : std::string("all");
    for (std::size_t n = 0; n < map.raw.cols(); ++n) {
      std::snprintf(buf, sizeof buf, "%.10g,%.10g", map.raw(r, n), map.normalized(r, n));
      out << channel << ',' << n << ',' << n / map.grid_w << ',' << n % map.grid_w << ',' << buf
          << '\n';
    }
  }
  return out.str();
}

}  // namespace chvit
