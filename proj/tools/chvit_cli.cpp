// Command-line front end: gen-data, train, eval, relevance, analyze, run.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chvit/binary_io.hpp"
#include "chvit/checkpoint.hpp"
#include "chvit/config.hpp"
#include "chvit/dataset.hpp"
#include "chvit/errors.hpp"
#include "chvit/evaluation.hpp"
#include "chvit/manifest.hpp"
#include "chvit/recipes.hpp"
#include "chvit/relevance.hpp"
#include "chvit/sampling.hpp"
#include "chvit/training.hpp"

namespace fs = std::filesystem;
using namespace chvit;

namespace {

constexpr const char* kVersion = "1.0.0";

std::vector<std::pair<std::string, std::string>> split_overrides(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Runs `body` as a named stage; failures are recorded and rethrown.
template <typename Fn>
void stage(RunManifest& m, const std::string& name, Fn&& body) {
  try {
    body();
    m.stage_ok(name);
  } catch (const std::exception& e) {
    m.stage_failed(name, e.what());
    throw;
  }
}

struct Options {
  std::size_t threads = 1;

  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::string out;
  std::string out_dir;
  std::string log;

  std::string checkpoint;
  std::string data;
  std::string grouped;
  std::string per_class;
  bool shared_embeddings = false;

  std::string image;
  std::size_t index = 0;
  std::size_t target = 0;
  std::string method = "grad";
  std::string out_prefix;
  std::string channels;

  std::size_t sampler_channels = 8;
  std::vector<std::string> modes{"hcs", "dropout"};
  std::vector<double> rates{0.5};

  std::string recipe;
  std::size_t seeds = 0;
  std::uint64_t base_seed = 0;
};

int cmd_gen_data(const Options& o) {
  const RunConfig rc = load_run_config(o.config, split_overrides(o.sets));
  fs::create_directories(o.out_dir);
  RunManifest m("gen-data", rc.synth.seed);
  m.set_config(config_pairs(format_run_config(rc)));
  const std::string train = (fs::path(o.out_dir) / "train.mcds").string();
  const std::string test = (fs::path(o.out_dir) / "test.mcds").string();
  const std::string manifest = (fs::path(o.out_dir) / "manifest.jsonl").string();
  try {
    SynthData d;
    stage(m, "generate", [&] { d = generate(rc.synth); });
    stage(m, "write", [&] {
      save_dataset(d.train.data, train);
      save_dataset(d.test.data, test);
    });
    m.add_output(train);
    m.add_output(test);
  } catch (...) {
    m.write(manifest);
    throw;
  }
  m.write(manifest);
  std::cout << "wrote " << train << " and " << test << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig rc = load_run_config(o.config, split_overrides(o.sets));
  ensure_parent(o.out);
  ensure_parent(o.log);
  RunManifest m("train", rc.train.seed);
  m.set_config(config_pairs(format_run_config(rc)));
  const std::string manifest = sibling(o.out, ".manifest.jsonl");
  try {
    Dataset data;
    std::optional<Dataset> partial;
    stage(m, "load-data", [&] {
      data = rc.data.empty() ? generate(rc.synth).train.data : load_dataset(rc.data);
      if (!rc.partial_data.empty()) partial = load_dataset(rc.partial_data);
    });
    std::optional<Trainer> trainer;
    stage(m, "train", [&] {
      const std::size_t B = rc.train.batch_size;
      if (partial) {
        trainer.emplace(rc.train, mixed_steps_per_epoch(data.size(), partial->size(), B, rc.mixed_objective));
        for (std::size_t e = 0; e < rc.train.schedule.total_epochs; ++e) {
          mixed_train_epoch(*trainer, data, *partial, rc.mixed_objective);
        }
      } else {
        trainer.emplace(train_model(rc.train, data));
      }
    });
    stage(m, "write", [&] {
      save_checkpoint(trainer->params(), o.out);
      std::ostringstream csv;
      csv << "step,epoch,lr,wd,loss\n";
      for (const auto& r : trainer->log()) {
        csv << r.step << ',' << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.wd) << ',' << fmt(r.loss) << '\n';
      }
      binary::write_file_atomic(o.log, csv.str());
    });
    m.add_output(o.out);
    m.add_output(o.log);
    std::cout << "final loss " << fmt(trainer->log().back().loss) << ", wrote " << o.out << "\n";
  } catch (...) {
    m.write(manifest);
    throw;
  }
  m.write(manifest);
  return 0;
}

int cmd_eval(const Options& o) {
  ModelParams params = load_checkpoint(o.checkpoint);
  const Dataset data = load_dataset(o.data);
  if (o.shared_embeddings) params = shared_channel_embedding_eval(params);
  ensure_parent(o.out);
  const auto report = evaluate_all_combinations(params, data, o.threads);
  write_combination_csv(report, o.out);
  const std::string grouped = o.grouped.empty() ? sibling(o.out, ".grouped.csv") : o.grouped;
  write_grouped_csv(report.grouped, grouped);
  if (!o.per_class.empty()) {
    write_per_class_csv(per_class_accuracy(params, data, ChannelCombination::full(data.channels), o.threads),
                        data, o.per_class);
  }
  for (const auto& g : report.grouped) {
    std::cout << "m=" << g.m << " mean " << fmt(g.mean) << " std " << fmt(g.std) << " (" << g.count << ")\n";
  }
  return 0;
}

ChannelCombination parse_channels(const std::string& text, std::size_t C) {
  if (text.empty()) return ChannelCombination::full(C);
  std::vector<std::size_t> ids;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '-')) {
    try {
      ids.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw InputError("channel list must be dash-joined ids like 0-2, got '" + text + "'");
    }
  }
  return ChannelCombination::from_unsorted(ids, C);
}

int cmd_relevance(const Options& o) {
  const ModelParams params = load_checkpoint(o.checkpoint);
  const Dataset data = load_dataset(o.image);
  if (o.index >= data.size()) {
    throw InputError("image index " + std::to_string(o.index) + " out of range for " +
                     std::to_string(data.size()) + " images");
  }
  const auto S = parse_channels(o.channels, params.config().channels);
  const auto map = compute_relevance(params, data.images[o.index], S, o.target, parse_relevance_method(o.method));
  ensure_parent(o.out_prefix);
  const std::size_t P = params.config().patch_size;
  for (std::size_t r = 0; r < map.normalized.rows(); ++r) {
    Tensor grid({map.grid_h, map.grid_w});
    for (std::size_t n = 0; n < grid.size(); ++n) grid[n] = map.normalized(r, n);
    const std::string tag = map.per_channel ? "_ch" + std::to_string(S.indices()[r]) : std::string("_all");
    write_pgm(upsample_nearest(grid, P), o.out_prefix + tag + ".pgm");
  }
  binary::write_file_atomic(o.out_prefix + ".csv", relevance_csv(map));
  const auto sums = map.row_sums();
  for (std::size_t r = 0; r < sums.size(); ++r) {
    std::cout << (map.per_channel ? "channel " + std::to_string(S.indices()[r]) : std::string("all"))
              << " relevance " << fmt(sums[r]) << "\n";
  }
  return 0;
}

int cmd_analyze_sampler(const Options& o) {
  std::ostringstream csv;
  csv << "mode,C,p,m,probability\n";
  for (const auto& mode_name : o.modes) {
    const SamplerMode mode = parse_sampler_mode(mode_name);
    const std::vector<double> rates = mode == SamplerMode::dropout ? o.rates : std::vector<double>{0.0};
    for (double p : rates) {
      SamplerConfig sc{mode, p, 0};
      sc.validate();
      const auto dist = exact_size_distribution(sc, o.sampler_channels);
      for (std::size_t m = 1; m <= dist.size(); ++m) {
        csv << mode_name << ',' << o.sampler_channels << ',' << fmt(p) << ',' << m << ',' << fmt(dist[m - 1]) << '\n';
      }
    }
  }
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    ensure_parent(o.out);
    binary::write_file_atomic(o.out, csv.str());
  }
  return 0;
}

int cmd_analyze_embeddings(const Options& o) {
  const ModelParams params = load_checkpoint(o.checkpoint);
  const Tensor corr = channel_embedding_correlation(params);
  std::ostringstream csv;
  csv << "channel";
  for (std::size_t j = 0; j < corr.cols(); ++j) csv << ',' << j;
  csv << '\n';
  for (std::size_t i = 0; i < corr.rows(); ++i) {
    csv << i;
    for (std::size_t j = 0; j < corr.cols(); ++j) csv << ',' << fmt(corr(i, j));
    csv << '\n';
  }
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    ensure_parent(o.out);
    binary::write_file_atomic(o.out, csv.str());
  }
  return 0;
}

int cmd_run(const Options& o) {
  fs::create_directories(o.out_dir);
  RunManifest m("run " + o.recipe, o.base_seed);
  m.set_config({{"recipe", o.recipe}, {"seeds", std::to_string(o.seeds)}, {"threads", std::to_string(o.threads)}});
  const std::string manifest = (fs::path(o.out_dir) / "manifest.jsonl").string();
  RecipeResult result;
  try {
    result = run_recipe(o.recipe, {o.out_dir, o.threads, o.seeds, o.base_seed}, &m);
  } catch (...) {
    m.write(manifest);
    throw;
  }
  for (const auto& c : result.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    if (!c.passed) m.stage_failed("check:" + c.name, c.detail);
  }
  m.write(manifest);
  return result.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-aware vision transformers on synthetic multi-channel data"};
  app.require_subcommand(0, 1);
  Options o;
  bool version = false;
  app.add_flag("--version", version, "Print program and file format versions");
  app.add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "Override one config key (key=value), repeatable");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic train/test pair");
  add_config(gen);
  gen->add_option("--out-dir", o.out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  add_config(train);
  train->add_option("--out", o.out, "Checkpoint path")->required();
  train->add_option("--log", o.log, "Training log CSV")->required();

  auto* eval = app.add_subcommand("eval", "Accuracy on every channel combination");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  eval->add_option("--data", o.data, "Dataset file")->required();
  eval->add_option("--out", o.out, "Per-combination CSV")->required();
  eval->add_option("--grouped", o.grouped, "Grouped CSV (default <out>.grouped.csv)");
  eval->add_option("--per-class", o.per_class, "Per-class accuracy CSV on all channels");
  eval->add_flag("--shared-embeddings", o.shared_embeddings, "Replace channel embeddings by their mean");

  auto* rel = app.add_subcommand("relevance", "Per-channel relevance heatmaps for one image");
  rel->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  rel->add_option("--image", o.image, "Dataset file holding the image")->required();
  rel->add_option("--index", o.index, "Image index in the dataset");
  rel->add_option("--class", o.target, "Target class")->required();
  rel->add_option("--method", o.method, "rollout or grad")->check(CLI::IsMember({"rollout", "grad"}));
  rel->add_option("--channels", o.channels, "Dash-joined channel ids (default all)");
  rel->add_option("--out-prefix", o.out_prefix, "Prefix for PGM and CSV outputs")->required();

  auto* analyze = app.add_subcommand("analyze", "Sampler and embedding analyses");
  analyze->require_subcommand(1);
  auto* sampler = analyze->add_subcommand("sampler", "Exact |S| distribution as CSV");
  sampler->add_option("--channels", o.sampler_channels, "Channel count C")->check(CLI::PositiveNumber);
  sampler->add_option("--mode", o.modes, "Sampler modes");
  sampler->add_option("--p", o.rates, "Dropout rates");
  sampler->add_option("--out", o.out, "CSV path (default stdout)");
  auto* emb = analyze->add_subcommand("embeddings", "Channel-embedding correlation matrix");
  emb->add_option("--checkpoint", o.checkpoint, "ChannelViT checkpoint")->required();
  emb->add_option("--out", o.out, "CSV path (default stdout)");

  auto* run = app.add_subcommand("run", "Run a canned experiment end to end");
  run->add_option("--recipe", o.recipe, "Recipe name")->required()->check(CLI::IsMember(recipe_names()));
  run->add_option("--out-dir", o.out_dir, "Output directory")->required();
  run->add_option("--seeds", o.seeds, "Seeds to run (default per recipe)");
  run->add_option("--seed", o.base_seed, "First seed");

  CLI11_PARSE(app, argc, argv);

  if (version) {
    std::cout << "chvit " << kVersion << "\ncheckpoint format " << kCheckpointVersion
              << "\ndataset format " << kDatasetVersion << "\n";
    return 0;
  }
  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*rel) return cmd_relevance(o);
    if (*sampler) return cmd_analyze_sampler(o);
    if (*emb) return cmd_analyze_embeddings(o);
    if (*run) return cmd_run(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << app.help();
  return 0;
}
