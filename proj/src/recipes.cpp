#include "chvit/recipes.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "chvit/binary_io.hpp"
#include "chvit/checkpoint.hpp"
#include "chvit/errors.hpp"
#include "chvit/parallel.hpp"
#include "chvit/relevance.hpp"
#include "chvit/sampling.hpp"

namespace fs = std::filesystem;

namespace chvit {

namespace {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct Spec {
  std::size_t default_seeds;
  KeyValues base;                          // data + shared training keys
  std::map<std::string, KeyValues> models;  // per model tag
};

const std::map<std::string, Spec, std::less<>>& specs() {
  static const std::map<std::string, Spec, std::less<>> table = {
      {"hcs-vs-none",
       {3,
        {{"channels", "3"}, {"image_h", "32"}, {"image_w", "32"}, {"patch_size", "16"},
         {"num_classes", "4"}, {"embed_dim", "64"}, {"depth", "4"}, {"heads", "4"},
         {"mlp_hidden", "256"}, {"info_mode", "redundant"}, {"groups", "0,0,0"},
         {"rho_in", "0.5"}, {"channel_offsets", "2,-2,0"}, {"train_samples", "4000"},
         {"test_samples", "500"}, {"epochs", "12"}, {"warmup_epochs", "3"}, {"batch_size", "32"},
         {"clip_norm", "1"}, {"variant", "vit"}},
        {{"none", {{"sampler", "none"}}}, {"hcs", {{"sampler", "hcs"}}}}}},
      {"complementary",
       {3,
        {{"channels", "4"}, {"image_h", "32"}, {"image_w", "32"}, {"patch_size", "16"},
         {"num_classes", "4"}, {"embed_dim", "32"}, {"depth", "2"}, {"heads", "2"},
         {"mlp_hidden", "128"}, {"info_mode", "complementary"}, {"groups", "0,0,1,1"},
         {"rho_in", "0.5"}, {"rho_out", "0"}, {"noise_std", "2"}, {"train_samples", "2000"},
         {"test_samples", "500"}, {"epochs", "100"}, {"warmup_epochs", "5"}, {"peak_lr", "1e-3"},
         {"clip_norm", "1"}, {"batch_size", "32"}, {"sampler", "hcs"}},
        {{"tied", {{"variant", "channelvit_tied"}}},
         {"untied", {{"variant", "channelvit_untied"}}},
         {"vit", {{"variant", "vit"}}}}}},
      {"relevance",
       {10,
        {{"channels", "3"}, {"image_h", "16"}, {"image_w", "16"}, {"patch_size", "8"},
         {"num_classes", "4"}, {"embed_dim", "32"}, {"depth", "2"}, {"heads", "2"},
         {"mlp_hidden", "64"}, {"info_mode", "single"}, {"groups", "0,1,2"}, {"rho_in", "1"},
         {"rho_out", "0"}, {"train_samples", "1000"}, {"test_samples", "40"}, {"epochs", "40"},
         {"warmup_epochs", "3"}, {"peak_lr", "1e-3"}, {"clip_norm", "1"}, {"batch_size", "16"},
         {"variant", "channelvit_tied"}, {"sampler", "hcs"}},
        {{"tied", {}}}}},
      {"embedding-correlation",
       {10,
        {{"channels", "3"}, {"image_h", "16"}, {"image_w", "16"}, {"patch_size", "8"},
         {"num_classes", "4"}, {"embed_dim", "32"}, {"depth", "2"}, {"heads", "2"},
         {"mlp_hidden", "64"}, {"info_mode", "complementary"}, {"groups", "0,0,1"},
         {"rho_in", "1"}, {"rho_out", "0"}, {"train_samples", "1000"}, {"test_samples", "100"},
         {"epochs", "40"}, {"warmup_epochs", "3"}, {"peak_lr", "1e-3"}, {"clip_norm", "1"},
         {"batch_size", "16"}, {"variant", "channelvit_tied"}, {"sampler", "hcs"}},
        {{"tied", {}}}}},
      {"sampler", {1, {}, {}}},
  };
  return table;
}

const Spec& spec(std::string_view recipe) {
  const auto it = specs().find(recipe);
  if (it == specs().end()) throw ConfigError("unknown recipe '" + std::string(recipe) + "'");
  return it->second;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool majority(std::size_t hits, std::size_t n) { return 2 * hits > n; }

class Runner {
 public:
  Runner(std::string recipe, const RecipeOptions& options, RunManifest* manifest)
      : options_(options), manifest_(manifest) {
    result_.recipe = std::move(recipe);
    if (!options_.out_dir.empty()) fs::create_directories(options_.out_dir);
  }

  template <typename Fn>
  auto stage(const std::string& name, Fn&& body) {
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        if (manifest_) manifest_->stage_ok(name);
      } else {
        auto out = body();
        if (manifest_) manifest_->stage_ok(name);
        return out;
      }
    } catch (const std::exception& e) {
      if (manifest_) manifest_->stage_failed(name, e.what());
      throw;
    }
  }

  bool writes() const { return !options_.out_dir.empty(); }

  std::string path(const std::string& name) {
    const fs::path p = fs::path(options_.out_dir) / name;
    fs::create_directories(p.parent_path());
    return p.string();
  }

  void output(const std::string& path) {
    result_.outputs.push_back(path);
    if (manifest_) manifest_->add_output(path);
  }

  void write_text(const std::string& name, const std::string& text) {
    if (!writes()) return;
    const std::string p = path(name);
    binary::write_file_atomic(p, text);
    output(p);
  }

  void write_run(const std::string& prefix, const TrainedRun& run) {
    if (!writes()) return;
    const std::string ck = path(prefix + ".chvt");
    save_checkpoint(run.params, ck);
    output(ck);
    const std::string comb = path(prefix + ".combinations.csv");
    write_combination_csv(run.report, comb);
    output(comb);
    const std::string grouped = path(prefix + ".grouped.csv");
    write_grouped_csv(run.report.grouped, grouped);
    output(grouped);
  }

  void check(std::string name, bool passed, std::string detail) {
    result_.checks.push_back({std::move(name), passed, std::move(detail)});
  }

  std::size_t seeds(std::size_t fallback) const { return options_.seeds ? options_.seeds : fallback; }
  std::uint64_t seed(std::size_t i) const { return options_.base_seed + i; }
  std::size_t threads() const { return options_.threads; }
  RecipeResult take() { return std::move(result_); }

 private:
  RecipeOptions options_;
  RunManifest* manifest_;
  RecipeResult result_;
};

std::string seed_dir(std::uint64_t s) { return "seed" + std::to_string(s) + "/"; }

RecipeResult run_hcs_vs_none(Runner& r) {
  const std::size_t n = r.seeds(spec("hcs-vs-none").default_seeds);
  std::size_t none_ok = 0, hcs_ok = 0;
  std::ostringstream summary;
  summary << "seed,model,full,one_channel,drop\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = r.seed(i);
    const RunConfig base = recipe_config("hcs-vs-none", "none", s);
    const SynthData data = r.stage("generate:" + std::to_string(s), [&] { return generate(base.synth); });
    for (const char* model : {"none", "hcs"}) {
      const RunConfig rc = recipe_config("hcs-vs-none", model, s);
      const TrainedRun run = r.stage(std::string("train+eval:") + model + ":" + std::to_string(s),
                                     [&] { return train_and_evaluate(rc, data, r.threads()); });
      r.write_run(seed_dir(s) + model, run);
      const double full = run.report.group(3).mean;
      const double one = run.report.group(1).mean;
      summary << s << ',' << model << ',' << fmt(full) << ',' << fmt(one) << ',' << fmt(full - one) << '\n';
      if (std::string_view(model) == "none" && full - one >= 0.20) ++none_ok;
      if (std::string_view(model) == "hcs" && full - one <= 0.10) ++hcs_ok;
    }
  }
  r.write_text("summary.csv", summary.str());
  r.check("no-hcs loses >= 20 points on one channel", majority(none_ok, n),
          std::to_string(none_ok) + "/" + std::to_string(n) + " seeds");
  r.check("hcs loses <= 10 points on one channel", majority(hcs_ok, n),
          std::to_string(hcs_ok) + "/" + std::to_string(n) + " seeds");
  return r.take();
}

RecipeResult run_complementary(Runner& r) {
  const std::size_t n = r.seeds(spec("complementary").default_seeds);
  std::size_t gain_ok = 0, tied_ok = 0, shared_ok = 0;
  std::ostringstream summary;
  summary << "seed,tied_full,untied_full,vit_full,tied_shared_full\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = r.seed(i);
    const RunConfig base = recipe_config("complementary", "tied", s);
    const SynthData data = r.stage("generate:" + std::to_string(s), [&] { return generate(base.synth); });
    std::map<std::string, double> full;
    std::optional<ModelParams> tied;
    for (const char* model : {"tied", "untied", "vit"}) {
      const RunConfig rc = recipe_config("complementary", model, s);
      TrainedRun run = r.stage(std::string("train+eval:") + model + ":" + std::to_string(s),
                               [&] { return train_and_evaluate(rc, data, r.threads()); });
      r.write_run(seed_dir(s) + model, run);
      full[model] = run.report.group(base.train.model.channels).mean;
      if (std::string_view(model) == "tied") tied = std::move(run.params);
    }
    const double shared = r.stage("shared-embeddings:" + std::to_string(s), [&] {
      return evaluate_accuracy(shared_channel_embedding_eval(*tied), data.test.data,
                               ChannelCombination::full(base.train.model.channels), r.threads());
    });
    summary << s << ',' << fmt(full["tied"]) << ',' << fmt(full["untied"]) << ',' << fmt(full["vit"])
            << ',' << fmt(shared) << '\n';
    if (full["tied"] - full["vit"] >= 0.03) ++gain_ok;
    if (full["tied"] >= full["untied"]) ++tied_ok;
    if (full["tied"] - shared >= 0.10) ++shared_ok;
  }
  r.write_text("summary.csv", summary.str());
  const std::string of = "/" + std::to_string(n) + " seeds";
  r.check("channelvit beats vit by >= 3 points", majority(gain_ok, n), std::to_string(gain_ok) + of);
  r.check("tied >= untied", 3 * tied_ok >= 2 * n, std::to_string(tied_ok) + of);
  r.check("mean channel embedding costs >= 10 points", majority(shared_ok, n),
          std::to_string(shared_ok) + of);
  return r.take();
}

}  // namespace

RelevanceTrial relevance_trial(std::uint64_t seed, std::size_t threads) {
  const RunConfig rc = recipe_config("relevance", "tied", seed);
  const SynthData data = generate(rc.synth);
  const Trainer trainer = train_model(rc.train, data.train.data);
  const ModelParams& params = trainer.params();
  const std::size_t C = rc.train.model.channels;
  RelevanceTrial out;
  out.channel_relevance.assign(C, 0.0);
  const auto full = ChannelCombination::full(C);
  const Dataset& test = data.test.data;
  std::vector<std::vector<double>> sums(test.size());
  std::vector<double> worst(test.size(), 0.0);
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto map = compute_relevance(params, test.images[i], full, test.labels[i], RelevanceMethod::grad);
    sums[i] = map.row_sums();
    Graph g(false);
    Binding b(g, params);
    AttentionTrace trace;
    forward(b, embed(b, test.images[i], full), &trace);
    const Tensor roll = attention_rollout(attention_values(trace));
    for (std::size_t row = 0; row < roll.rows(); ++row) {
      double t = 0.0;
      for (double v : roll.row(row)) t += v;
      worst[i] = std::max(worst[i], std::abs(t - 1.0));
    }
  });
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t c = 0; c < C; ++c) out.channel_relevance[c] += sums[i][c];
    out.max_rollout_row_error = std::max(out.max_rollout_row_error, worst[i]);
  }
  out.accuracy = evaluate_accuracy(params, test, full, threads);
  const auto top = std::max_element(out.channel_relevance.begin(), out.channel_relevance.end());
  out.top_channel = static_cast<std::size_t>(top - out.channel_relevance.begin());
  return out;
}

EmbeddingTrial embedding_trial(std::uint64_t seed) {
  const RunConfig rc = recipe_config("embedding-correlation", "tied", seed);
  const SynthData data = generate(rc.synth);
  const Trainer trainer = train_model(rc.train, data.train.data);
  EmbeddingTrial out;
  out.correlation = channel_embedding_correlation(trainer.params());
  out.params = trainer.params();
  return out;
}

bool EmbeddingTrial::duplicate_pair_wins() const {
  const double dup = correlation(0, 1);
  return dup > correlation(0, 2) && dup > correlation(1, 2);
}

double chi_square_pvalue(std::span<const std::size_t> observed, std::span<const double> expected_prob) {
  if (observed.size() != expected_prob.size() || observed.size() < 2) {
    throw InputError("chi-square needs matching observed/expected vectors with at least two cells");
  }
  double total = 0.0;
  for (auto o : observed) total += static_cast<double>(o);
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = expected_prob[i] * total;
    if (e <= 0.0) throw InputError("chi-square cell with zero expected count");
    const double d = static_cast<double>(observed[i]) - e;
    stat += d * d / e;
  }
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

namespace {

RecipeResult run_relevance(Runner& r) {
  const std::size_t n = r.seeds(spec("relevance").default_seeds);
  std::size_t ok = 0;
  double worst = 0.0;
  std::ostringstream summary;
  summary << "seed,accuracy,top_channel,relevance_ch0,relevance_ch1,relevance_ch2\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = r.seed(i);
    const RelevanceTrial t = r.stage("trial:" + std::to_string(s), [&] { return relevance_trial(s, r.threads()); });
    summary << s << ',' << fmt(t.accuracy) << ',' << t.top_channel;
    for (double v : t.channel_relevance) summary << ',' << fmt(v);
    summary << '\n';
    if (t.top_channel == 0) ++ok;
    worst = std::max(worst, t.max_rollout_row_error);
  }
  r.write_text("summary.csv", summary.str());
  r.check("rollout rows sum to 1", worst <= 1e-10, "max deviation " + fmt(worst));
  r.check("informative channel has the top relevance", 10 * ok >= 9 * n,
          std::to_string(ok) + "/" + std::to_string(n) + " trials");
  return r.take();
}

RecipeResult run_embedding_correlation(Runner& r) {
  const std::size_t n = r.seeds(spec("embedding-correlation").default_seeds);
  std::size_t ok = 0;
  std::ostringstream summary;
  summary << "seed,corr01,corr02,corr12\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = r.seed(i);
    const EmbeddingTrial t = r.stage("trial:" + std::to_string(s), [&] { return embedding_trial(s); });
    summary << s << ',' << fmt(t.correlation(0, 1)) << ',' << fmt(t.correlation(0, 2)) << ','
            << fmt(t.correlation(1, 2)) << '\n';
    if (t.duplicate_pair_wins()) ++ok;
    if (r.writes()) {
      const std::string ck = r.path(seed_dir(s) + "tied.chvt");
      save_checkpoint(t.params, ck);
      r.output(ck);
    }
  }
  r.write_text("summary.csv", summary.str());
  r.check("duplicate pair has the highest embedding correlation", 10 * ok >= 9 * n,
          std::to_string(ok) + "/" + std::to_string(n) + " seeds");
  return r.take();
}

RecipeResult run_sampler(Runner& r) {
  constexpr std::size_t kDraws = 80000;
  std::ostringstream csv;
  csv << "mode,C,p,m,probability,empirical\n";
  Rng rng(r.seed(0));
  auto one = [&](SamplerConfig sc, std::size_t C) {
    const auto exact = exact_size_distribution(sc, C);
    std::vector<std::size_t> counts(C, 0);
    ChannelSampler sampler(sc, rng.split());
    for (std::size_t k = 0; k < kDraws; ++k) ++counts[sampler.draw(C).size() - 1];
    const std::string mode(sampler_mode_name(sc.mode));
    for (std::size_t m = 1; m <= C; ++m) {
      csv << mode << ',' << C << ',' << fmt(sc.dropout_rate) << ',' << m << ',' << fmt(exact[m - 1]) << ','
          << fmt(static_cast<double>(counts[m - 1]) / kDraws) << '\n';
    }
    const double p = chi_square_pvalue(counts, exact);
    r.check(mode + " C=" + std::to_string(C) + " size law", p > 0.01, "chi-square p = " + fmt(p));
  };
  r.stage("draw", [&] {
    for (std::size_t C : {3, 5, 8}) one({SamplerMode::hcs, 0.0, 0}, C);
    one({SamplerMode::dropout, 0.5, 0}, 8);
  });
  r.write_text("sampler.csv", csv.str());
  return r.take();
}

}  // namespace

bool RecipeResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const RecipeCheck& c) { return c.passed; });
}

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = {"hcs-vs-none", "complementary", "relevance",
                                                 "embedding-correlation", "sampler"};
  return names;
}

RunConfig recipe_config(std::string_view recipe, std::string_view model, std::uint64_t seed) {
  const Spec& sp = spec(recipe);
  const auto it = sp.models.find(std::string(model));
  if (it == sp.models.end()) {
    throw ConfigError("recipe '" + std::string(recipe) + "' has no model '" + std::string(model) + "'");
  }
  RunConfig rc;
  for (const auto& [k, v] : sp.base) set_config_value(rc, k, v);
  for (const auto& [k, v] : it->second) set_config_value(rc, k, v);
  rc.train.seed = seed;
  rc.resolve();
  rc.train.validate();
  return rc;
}

TrainedRun train_and_evaluate(const RunConfig& config, const SynthData& data, std::size_t threads) {
  Trainer trainer = train_model(config.train, data.train.data);
  TrainedRun run{config, trainer.params(), {}, trainer.log()};
  run.report = evaluate_all_combinations(run.params, data.test.data, threads);
  return run;
}

RecipeResult run_recipe(std::string_view name, const RecipeOptions& options, RunManifest* manifest) {
  spec(name);
  Runner r{std::string(name), options, manifest};
  if (name == "hcs-vs-none") return run_hcs_vs_none(r);
  if (name == "complementary") return run_complementary(r);
  if (name == "relevance") return run_relevance(r);
  if (name == "embedding-correlation") return run_embedding_correlation(r);
  return run_sampler(r);
}

}  // namespace chvit
