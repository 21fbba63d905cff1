#include "chvit/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "chvit/binary_io.hpp"
#include "chvit/errors.hpp"
#include "chvit/parallel.hpp"
#include "chvit/sampling.hpp"

namespace chvit {

namespace {

void check_data(const ModelParams& params, const Dataset& data) {
  if (data.size() == 0) throw InputError("cannot evaluate on an empty dataset");
  const ModelConfig& c = params.config();
  if (data.channels != c.channels || data.height != c.image_h || data.width != c.image_w) {
    throw InputError("dataset geometry " + std::to_string(data.channels) + "x" +
                     std::to_string(data.height) + "x" + std::to_string(data.width) +
                     " does not match the model's " + std::to_string(c.channels) + "x" +
                     std::to_string(c.image_h) + "x" + std::to_string(c.image_w));
  }
}

// hits[k * n + i] = 1 when image i is classified correctly with combination k.
std::vector<unsigned char> score_images(const ModelParams& params, const Dataset& data,
                                        const std::vector<ChannelCombination>& combos,
                                        std::size_t threads) {
  const std::size_t n = data.size();
  std::vector<unsigned char> hits(combos.size() * n, 0);
  parallel_for(hits.size(), threads, [&](std::size_t job) {
    const std::size_t k = job / n;
    const std::size_t i = job % n;
    const auto logits = predict_logits(params, data.images[i], combos[k]);
    hits[job] = argmax(logits) == data.labels[i] ? 1 : 0;
  });
  return hits;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double CombinationReport::accuracy(const ChannelCombination& combination) const {
  for (const auto& e : entries) {
    if (e.combination == combination) return e.value;
  }
  throw InputError("combination " + combination.label() + " is not in the report");
}

const GroupStat& CombinationReport::group(std::size_t m) const {
  for (const auto& g : grouped) {
    if (g.m == m) return g;
  }
  throw InputError("no combinations of size " + std::to_string(m) + " in the report");
}

std::vector<GroupStat> group_by_size(const std::vector<CombinationScore>& entries) {
  std::vector<GroupStat> out;
  std::size_t i = 0;
  while (i < entries.size()) {
    const std::size_t m = entries[i].combination.size();
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].combination.size() == m) sum += entries[j++].value;
    const double count = static_cast<double>(j - i);
    const double mean = sum / count;
    double var = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const double d = entries[k].value - mean;
      var += d * d;
    }
    out.push_back({m, mean, std::sqrt(var / count), j - i});
    i = j;
  }
  return out;
}

double evaluate_accuracy(const ModelParams& params, const Dataset& data,
                         const ChannelCombination& channels, std::size_t threads) {
  check_data(params, data);
  const auto hits = score_images(params, data, {channels}, threads);
  std::size_t correct = 0;
  for (unsigned char h : hits) correct += h;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

CombinationReport evaluate_all_combinations(const ModelParams& params, const Dataset& data,
                                            std::size_t threads) {
  const std::size_t C = params.config().channels;
  if (C > kMaxEvalChannels) {
    throw InputError("refusing to evaluate " + std::to_string((std::uint64_t{1} << C) - 1) +
                     " channel combinations for " + std::to_string(C) + " channels (limit is " +
                     std::to_string(kMaxEvalChannels) + " channels)");
  }
  check_data(params, data);
  const auto combos = enumerate_all_combinations(C);
  const auto hits = score_images(params, data, combos, threads);
  const std::size_t n = data.size();

  CombinationReport report;
  report.channels = C;
  report.n_eval = n;
  for (std::size_t k = 0; k < combos.size(); ++k) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += hits[k * n + i];
    report.entries.push_back({combos[k], static_cast<double>(correct) / static_cast<double>(n)});
  }
  report.grouped = group_by_size(report.entries);
  return report;
}

GainReport gain_report(const CombinationReport& a, const CombinationReport& b) {
  if (a.entries.size() != b.entries.size()) {
    throw InputError("reports cover " + std::to_string(a.entries.size()) + " and " +
                     std::to_string(b.entries.size()) + " combinations");
  }
  GainReport out;
  for (std::size_t k = 0; k < a.entries.size(); ++k) {
    if (!(a.entries[k].combination == b.entries[k].combination)) {
      throw InputError("combination sets differ at " + a.entries[k].combination.label() + " vs " +
                       b.entries[k].combination.label());
    }
    out.entries.push_back({a.entries[k].combination, a.entries[k].value - b.entries[k].value});
  }
  out.grouped = group_by_size(out.entries);
  return out;
}

std::vector<double> per_class_accuracy(const ModelParams& params, const Dataset& data,
                                       const ChannelCombination& channels, std::size_t threads) {
  check_data(params, data);
  const auto hits = score_images(params, data, {channels}, threads);
  const std::size_t K = params.config().num_classes;
  std::vector<std::size_t> correct(K, 0), total(K, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t y = data.labels[i];
    if (y >= K) throw InputError("label " + std::to_string(y) + " out of range");
    ++total[y];
    correct[y] += hits[i];
  }
  std::vector<double> acc(K, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < K; ++k) {
    if (total[k] > 0) acc[k] = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
  }
  return acc;
}

void write_combination_csv(const CombinationReport& report, const std::string& path) {
  std::ostringstream out;
  out << "combination,m,accuracy\n";
  for (const auto& e : report.entries) {
    out << e.combination.label() << ',' << e.combination.size() << ',' << fmt(e.value) << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

void write_grouped_csv(const std::vector<GroupStat>& grouped, const std::string& path) {
  std::ostringstream out;
  out << "m,mean,std,count\n";
  for (const auto& g : grouped) {
    out << g.m << ',' << fmt(g.mean) << ',' << fmt(g.std) << ',' << g.count << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

void write_gain_csv(const GainReport& report, const std::string& path) {
  std::ostringstream out;
  out << "combination,m,gain\n";
  for (const auto& e : report.entries) {
    out << e.combination.label() << ',' << e.combination.size() << ',' << fmt(e.value) << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

void write_per_class_csv(const std::vector<double>& accuracy, const Dataset& data,
                         const std::string& path) {
  std::vector<std::size_t> count(accuracy.size(), 0);
  for (auto y : data.labels) {
    if (y < count.size()) ++count[y];
  }
  std::ostringstream out;
  out << "class,count,accuracy\n";
  for (std::size_t k = 0; k < accuracy.size(); ++k) {
    out << k << ',' << count[k] << ',' << (count[k] ? fmt(accuracy[k]) : std::string("nan")) << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

}  // namespace chvit
