#include "chvit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>

#include "chvit/binary_io.hpp"
#include "chvit/errors.hpp"
#include "chvit/rng.hpp"

namespace chvit {

namespace {

constexpr std::string_view kMagic = "MCDS";

std::string dims_str(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset and its file format

void Dataset::validate() const {
  if (channel_names.size() != channels) {
    throw InputError("dataset has " + std::to_string(channel_names.size()) + " channel names for " +
                     std::to_string(channels) + " channels");
  }
  if (labels.size() != images.size()) {
    throw InputError("dataset has " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(images.size()) + " images");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.channels != channels || im.height != height || im.width != width ||
        im.pixels.size() != channels * height * width) {
      throw InputError("sample " + std::to_string(i) + " is " +
                       dims_str(im.channels, im.height, im.width) + ", dataset is " +
                       dims_str(channels, height, width));
    }
    if (labels[i] >= num_classes) {
      throw InputError("sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                       " >= " + std::to_string(num_classes) + " classes");
    }
  }
}

std::string encode_dataset(const Dataset& ds) {
  ds.validate();
  binary::Writer w;
  w.raw(kMagic);
  w.u16(kDatasetVersion);
  for (std::size_t v : {ds.channels, ds.height, ds.width, ds.num_classes, ds.images.size()}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (const auto& name : ds.channel_names) w.str(name);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    w.u16(ds.labels[i]);
    for (float v : ds.images[i].pixels) w.f32(v);
  }
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  binary::Reader r(bytes, "dataset");
  if (bytes.size() < 4 || r.raw(4) != kMagic) throw FormatError("dataset: bad magic (expected MCDS)");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.channels = r.u32();
  ds.height = r.u32();
  ds.width = r.u32();
  ds.num_classes = r.u32();
  const std::size_t count = r.u32();
  for (std::size_t c = 0; c < ds.channels; ++c) ds.channel_names.push_back(r.str());

  const std::size_t plane = ds.channels * ds.height * ds.width;
  const std::size_t record = 2 + 4 * plane;
  const std::size_t expected = r.position() + count * record;
  if (bytes.size() != expected) {
    throw FormatError("dataset: payload of " + std::to_string(count) + " samples needs " +
                      std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  }
  ds.images.reserve(count);
  ds.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels.push_back(r.u16());
    MultiChannelImage im(ds.channels, ds.height, ds.width);
    for (float& v : im.pixels) v = r.f32();
    ds.images.push_back(std::move(im));
  }
  try {
    ds.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  binary::write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(binary::read_file(path)); }

// ---------------------------------------------------------------------------
// Generator

std::string_view info_mode_name(InfoMode m) {
  switch (m) {
    case InfoMode::redundant: return "redundant";
    case InfoMode::complementary: return "complementary";
    case InfoMode::single: return "single";
  }
  return "?";
}

InfoMode parse_info_mode(std::string_view name) {
  if (name == "redundant") return InfoMode::redundant;
  if (name == "complementary") return InfoMode::complementary;
  if (name == "single") return InfoMode::single;
  throw ConfigError("unknown info_mode '" + std::string(name) +
                    "' (expected redundant, complementary or single)");
}

std::vector<std::size_t> SynthConfig::resolved_groups() const {
  return groups.empty() ? std::vector<std::size_t>(channels, 0) : groups;
}

std::size_t SynthConfig::num_groups() const {
  const auto g = resolved_groups();
  return g.empty() ? 0 : *std::max_element(g.begin(), g.end()) + 1;
}

void SynthConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("image dimensions must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_classes > 65535) throw ConfigError("num_classes must fit in 16 bits");
  if (!groups.empty() && groups.size() != channels) {
    throw ConfigError("groups lists " + std::to_string(groups.size()) + " entries for " +
                      std::to_string(channels) + " channels");
  }
  const auto g = resolved_groups();
  const std::set<std::size_t> ids(g.begin(), g.end());
  if (*ids.rbegin() + 1 != ids.size()) {
    throw ConfigError("group ids must be 0..G-1 with every id used");
  }
  if (!(rho_in >= -1.0 && rho_in <= 1.0)) throw ConfigError("rho_in must lie in [-1, 1]");
  if (!(rho_out >= -1.0 && rho_out <= 1.0)) throw ConfigError("rho_out must lie in [-1, 1]");
  if (info_mode == InfoMode::complementary) {
    if (ids.size() < 2) throw ConfigError("complementary mode needs at least 2 channel groups");
    if (ids.size() >= 16 || num_classes != (std::size_t{1} << ids.size())) {
      throw ConfigError("complementary mode with " + std::to_string(ids.size()) +
                        " groups needs num_classes = " + std::to_string(std::size_t{1} << ids.size()));
    }
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be nonnegative");
  if (!(signal >= 0.0)) throw ConfigError("signal must be nonnegative");
  if (!(stripe_period > 0.0)) throw ConfigError("stripe_period must be positive");
  if (!channel_offsets.empty() && channel_offsets.size() != channels) {
    throw ConfigError("channel_offsets needs one value per channel");
  }
  if (!channel_gains.empty() && channel_gains.size() != channels) {
    throw ConfigError("channel_gains needs one value per channel");
  }
  psd_cholesky(target_correlation(*this), "background correlation");
}

Tensor target_correlation(const SynthConfig& config) {
  const auto g = config.resolved_groups();
  const std::size_t c = config.channels;
  Tensor r({c, c});
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      r(i, j) = i == j ? 1.0 : (g[i] == g[j] ? config.rho_in : config.rho_out);
    }
  }
  return r;
}

Tensor psd_cholesky(const Tensor& r, std::string_view name) {
  const std::size_t n = r.rows();
  constexpr double kTol = 1e-10;
  auto fail = [&] {
    std::string m = "correlation matrix '" + std::string(name) + "' is not positive semidefinite: [";
    for (std::size_t i = 0; i < n; ++i) {
      m += i ? "; " : "";
      for (std::size_t j = 0; j < n; ++j) m += (j ? " " : "") + std::to_string(r(i, j));
    }
    throw ConfigError(m + "]");
  };
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = r(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (pivot < -kTol) fail();
    const double diag = pivot > kTol ? std::sqrt(pivot) : 0.0;
    l(j, j) = diag;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = r(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      if (diag == 0.0) {
        if (std::abs(v) > 1e-8) fail();
        l(i, j) = 0.0;
      } else {
        l(i, j) = v / diag;
      }
    }
  }
  return l;
}

namespace {

struct Stripes {
  double kx;
  double ky;
  double phase;
};

Stripes draw_stripes(double angle, double period, Rng& rng) {
  const double k = 2.0 * std::numbers::pi / period;
  return {k * std::cos(angle), k * std::sin(angle), 2.0 * std::numbers::pi * rng.uniform()};
}

SynthSplit generate_split(const SynthConfig& cfg, const Tensor& chol, std::size_t count, Rng& rng) {
  const std::size_t c = cfg.channels;
  const std::size_t k = cfg.num_classes;
  const auto group = cfg.resolved_groups();
  const std::size_t num_groups = cfg.num_groups();
  const double pi = std::numbers::pi;

  SynthSplit split;
  Dataset& ds = split.data;
  ds.channels = c;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.num_classes = k;
  for (std::size_t i = 0; i < c; ++i) ds.channel_names.push_back("ch" + std::to_string(i));

  std::vector<double> z(c);
  std::vector<double> bg(c);
  for (std::size_t s = 0; s < count; ++s) {
    const auto label = static_cast<std::size_t>(rng.uniform_int(k));
    std::vector<std::uint8_t> latent(num_groups, 0);
    std::vector<std::optional<Stripes>> pattern(num_groups);
    switch (cfg.info_mode) {
      case InfoMode::redundant: {
        const Stripes shared = draw_stripes(pi * static_cast<double>(label) / static_cast<double>(k),
                                            cfg.stripe_period, rng);
        for (std::size_t gi = 0; gi < num_groups; ++gi) {
          latent[gi] = static_cast<std::uint8_t>(label);
          pattern[gi] = shared;
        }
        break;
      }
      case InfoMode::complementary:
        for (std::size_t gi = 0; gi < num_groups; ++gi) {
          const std::size_t bit = (label >> gi) & 1U;
          latent[gi] = static_cast<std::uint8_t>(bit);
          pattern[gi] = draw_stripes(0.5 * pi * static_cast<double>(bit), cfg.stripe_period, rng);
        }
        break;
      case InfoMode::single:
        latent[0] = static_cast<std::uint8_t>(label);
        pattern[0] = draw_stripes(pi * static_cast<double>(label) / static_cast<double>(k),
                                  cfg.stripe_period, rng);
        break;
    }

    MultiChannelImage im(c, cfg.height, cfg.width);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        for (double& v : z) v = rng.normal();
        for (std::size_t i = 0; i < c; ++i) {
          double v = 0.0;
          for (std::size_t j = 0; j <= i; ++j) v += chol(i, j) * z[j];
          bg[i] = v;
        }
        for (std::size_t i = 0; i < c; ++i) {
          double v = bg[i];
          if (const auto& p = pattern[group[i]]; p && cfg.signal > 0.0) {
            v += cfg.signal * std::sin(p->kx * static_cast<double>(x) +
                                       p->ky * static_cast<double>(y) + p->phase);
          }
          if (!cfg.channel_gains.empty()) v *= cfg.channel_gains[i];
          if (!cfg.channel_offsets.empty()) v += cfg.channel_offsets[i];
          im.at(i, y, x) = static_cast<float>(v);
        }
        if (cfg.noise_std > 0.0) {
          for (std::size_t i = 0; i < c; ++i) {
            im.at(i, y, x) += static_cast<float>(cfg.noise_std * rng.normal());
          }
        }
      }
    }
    ds.images.push_back(std::move(im));
    ds.labels.push_back(static_cast<std::uint16_t>(label));
    split.latents.push_back(std::move(latent));
  }
  return split;
}

}  // namespace

SynthData generate(const SynthConfig& config) {
  config.validate();
  const Tensor chol = psd_cholesky(target_correlation(config), "background correlation");
  Rng root(config.seed);
  Rng train_rng = root.split();
  Rng test_rng = root.split();
  SynthData out;
  out.train = generate_split(config, chol, config.train_samples, train_rng);
  out.test = generate_split(config, chol, config.test_samples, test_rng);
  return out;
}

// ---------------------------------------------------------------------------
// Correlation analysis

Tensor pearson_rows(const Tensor& rows) {
  const std::size_t n = rows.rows();
  const std::size_t m = rows.cols();
  if (m < 2) throw InputError("correlation needs at least two observations per variable");
  std::vector<double> centered(rows.data);
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += rows(i, j);
    mean /= static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
      centered[i * m + j] -= mean;
      norm[i] += centered[i * m + j] * centered[i * m + j];
    }
    norm[i] = std::sqrt(norm[i]);
    if (norm[i] == 0.0) throw InputError("correlation undefined for a constant variable");
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < m; ++t) dot += centered[i * m + t] * centered[j * m + t];
      const double r = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      out(i, j) = r;
      out(j, i) = r;
    }
  }
  return out;
}

Tensor channel_pixel_correlation(const Dataset& ds) {
  const std::size_t c = ds.channels;
  const std::size_t plane = ds.height * ds.width;
  Tensor flat({c, plane * ds.size()});
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const auto& px = ds.images[s].pixels;
    for (std::size_t i = 0; i < c; ++i) {
      std::copy_n(px.begin() + static_cast<std::ptrdiff_t>(i * plane), plane,
                  flat.data.begin() + static_cast<std::ptrdiff_t>(i * flat.cols() + s * plane));
    }
  }
  return pearson_rows(flat);
}

Tensor channel_embedding_correlation(const ModelParams& params) {
  if (!is_channelvit(params.config().variant)) {
    throw UnsupportedVariantError("channel embedding correlation needs a ChannelViT, got " +
                                  std::string(variant_name(params.config().variant)));
  }
  return pearson_rows(params.at("chn").value);
}

}  // namespace chvit
