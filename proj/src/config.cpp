#include "chvit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "chvit/binary_io.hpp"
#include "chvit/errors.hpp"

namespace chvit {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                    std::string(want));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::string_view want) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, want);
  return out;
}

std::size_t to_size(std::string_view k, std::string_view v) {
  return parse_number<std::size_t>(k, v, "a non-negative integer");
}
std::uint64_t to_u64(std::string_view k, std::string_view v) {
  return parse_number<std::uint64_t>(k, v, "a non-negative integer");
}
double to_double(std::string_view k, std::string_view v) {
  return parse_number<double>(k, v, "a number");
}
bool to_bool(std::string_view k, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(k, v, "a boolean");
}

template <typename T, typename Fn>
std::vector<T> to_list(std::string_view v, Fn&& one) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = v.find(',', start);
    out.push_back(one(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start))));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += num(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct Entry {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(name, field, desc)                                                              \
  Entry {                                                                                        \
    {name, desc}, [](RunConfig& c, std::string_view v) { c.field = to_size(name, v); },         \
        [](const RunConfig& c) { return std::to_string(c.field); }                              \
  }
#define DOUBLE_KEY(name, field, desc)                                                            \
  Entry {                                                                                        \
    {name, desc}, [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); },       \
        [](const RunConfig& c) { return num(c.field); }                                         \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SIZE_KEY("image_h", train.model.image_h, "image height in pixels"),
      SIZE_KEY("image_w", train.model.image_w, "image width in pixels"),
      SIZE_KEY("patch_size", train.model.patch_size, "square patch side P"),
      SIZE_KEY("channels", train.model.channels, "input channel count C"),
      SIZE_KEY("embed_dim", train.model.embed_dim, "token width D"),
      SIZE_KEY("depth", train.model.depth, "encoder blocks"),
      SIZE_KEY("heads", train.model.heads, "attention heads"),
      SIZE_KEY("mlp_hidden", train.model.mlp_hidden, "MLP hidden width"),
      SIZE_KEY("num_classes", train.model.num_classes, "class count K"),
      Entry{{"variant", "channelvit_tied|channelvit_untied|vit|multivit"},
            [](RunConfig& c, std::string_view v) { c.train.model.variant = parse_variant(v); },
            [](const RunConfig& c) { return std::string(variant_name(c.train.model.variant)); }},
      DOUBLE_KEY("peak_lr", train.schedule.peak_lr, "learning rate at the end of warmup"),
      DOUBLE_KEY("final_lr", train.schedule.final_lr, "learning rate at the last step"),
      SIZE_KEY("warmup_epochs", train.schedule.warmup_epochs, "linear warmup length"),
      SIZE_KEY("epochs", train.schedule.total_epochs, "total training epochs"),
      DOUBLE_KEY("wd_start", train.schedule.wd_start, "weight decay at step 0"),
      DOUBLE_KEY("wd_end", train.schedule.wd_end, "weight decay at the last step"),
      Entry{{"sampler", "none|hcs|dropout"},
            [](RunConfig& c, std::string_view v) { c.train.sampler.mode = parse_sampler_mode(v); },
            [](const RunConfig& c) { return std::string(sampler_mode_name(c.train.sampler.mode)); }},
      DOUBLE_KEY("dropout_rate", train.sampler.dropout_rate, "channel dropout probability"),
      Entry{{"sampler_seed", "channel sampler seed (defaults to seed)"},
            [](RunConfig& c, std::string_view v) { c.sampler_seed = to_u64("sampler_seed", v); },
            [](const RunConfig& c) { return std::to_string(c.sampler_seed.value_or(c.train.seed)); }},
      SIZE_KEY("batch_size", train.batch_size, "images per optimizer step"),
      Entry{{"seed", "run seed (init, shuffling)"},
            [](RunConfig& c, std::string_view v) { c.train.seed = to_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      Entry{{"sample_per_batch", "one channel draw per batch instead of per image"},
            [](RunConfig& c, std::string_view v) { c.train.sample_per_batch = to_bool("sample_per_batch", v); },
            [](const RunConfig& c) { return std::string(c.train.sample_per_batch ? "true" : "false"); }},
      Entry{{"decay_embeddings", "apply weight decay to embedding tables"},
            [](RunConfig& c, std::string_view v) { c.train.decay_embeddings = to_bool("decay_embeddings", v); },
            [](const RunConfig& c) { return std::string(c.train.decay_embeddings ? "true" : "false"); }},
      DOUBLE_KEY("clip_norm", train.clip_norm, "global gradient-norm clip, 0 disables"),
      Entry{{"data", "training dataset file (empty: generate)"},
            [](RunConfig& c, std::string_view v) { c.data = std::string(v); },
            [](const RunConfig& c) { return c.data; }},
      Entry{{"test_data", "evaluation dataset file"},
            [](RunConfig& c, std::string_view v) { c.test_data = std::string(v); },
            [](const RunConfig& c) { return c.test_data; }},
      Entry{{"partial_data", "dataset observing a prefix of the channels"},
            [](RunConfig& c, std::string_view v) { c.partial_data = std::string(v); },
            [](const RunConfig& c) { return c.partial_data; }},
      Entry{{"mixed_objective", "average|upsample"},
            [](RunConfig& c, std::string_view v) { c.mixed_objective = parse_mixed_objective(v); },
            [](const RunConfig& c) {
              return std::string(c.mixed_objective == MixedObjective::average ? "average" : "upsample");
            }},
      SIZE_KEY("threads", threads, "worker threads for evaluation"),
      SIZE_KEY("train_samples", synth.train_samples, "generated training images"),
      SIZE_KEY("test_samples", synth.test_samples, "generated test images"),
      Entry{{"groups", "comma-separated group id per channel"},
            [](RunConfig& c, std::string_view v) {
              c.synth.groups = to_list<std::size_t>(v, [](std::string_view x) { return to_size("groups", x); });
            },
            [](const RunConfig& c) { return join(c.synth.groups); }},
      DOUBLE_KEY("rho_in", synth.rho_in, "background correlation inside a group"),
      DOUBLE_KEY("rho_out", synth.rho_out, "background correlation across groups"),
      Entry{{"info_mode", "redundant|complementary|single"},
            [](RunConfig& c, std::string_view v) { c.synth.info_mode = parse_info_mode(v); },
            [](const RunConfig& c) { return std::string(info_mode_name(c.synth.info_mode)); }},
      DOUBLE_KEY("noise_std", synth.noise_std, "independent per-channel noise"),
      DOUBLE_KEY("signal", synth.signal, "stripe amplitude"),
      DOUBLE_KEY("stripe_period", synth.stripe_period, "stripe period in pixels"),
      Entry{{"channel_offsets", "comma-separated additive offset per channel"},
            [](RunConfig& c, std::string_view v) {
              c.synth.channel_offsets =
                  to_list<double>(v, [](std::string_view x) { return to_double("channel_offsets", x); });
            },
            [](const RunConfig& c) { return join(c.synth.channel_offsets); }},
      Entry{{"channel_gains", "comma-separated gain per channel"},
            [](RunConfig& c, std::string_view v) {
              c.synth.channel_gains =
                  to_list<double>(v, [](std::string_view x) { return to_double("channel_gains", x); });
            },
            [](const RunConfig& c) { return join(c.synth.channel_gains); }},
      Entry{{"data_seed", "generator seed (defaults to seed)"},
            [](RunConfig& c, std::string_view v) { c.data_seed = to_u64("data_seed", v); },
            [](const RunConfig& c) { return std::to_string(c.data_seed.value_or(c.train.seed)); }},
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY

}  // namespace

void RunConfig::resolve() {
  train.sampler.seed = sampler_seed.value_or(train.seed);
  synth.seed = data_seed.value_or(train.seed);
  synth.channels = train.model.channels;
  synth.height = train.model.image_h;
  synth.width = train.model.image_w;
  synth.num_classes = train.model.num_classes;
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = SIZE_MAX;
  for (const auto& e : entries()) {
    const std::size_t d = levenshtein(key, e.key.name);
    if (d < best_d) {
      best_d = d;
      best = e.key.name;
    }
  }
  return best;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (e.key.name == key) {
      e.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "' (did you mean '" +
                    nearest_key(key) + "'?)");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                  std::string_view source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' set twice");
    out.emplace_back(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

RunConfig load_run_config(const std::optional<std::string>& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig config;
  if (path) {
    const std::string text = binary::read_file(*path);
    for (const auto& [k, v] : parse_key_values(text, *path)) set_config_value(config, k, v);
  }
  for (const auto& [k, v] : overrides) set_config_value(config, k, v);
  config.resolve();
  config.train.validate();
  return config;
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key.name + " = " + e.get(config) + "\n";
  return out;
}

}  // namespace chvit
