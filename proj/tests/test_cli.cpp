#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chvit/checkpoint.hpp"
#include "chvit/config.hpp"
#include "chvit/dataset.hpp"
#include "chvit/errors.hpp"
#include "chvit/manifest.hpp"

namespace fs = std::filesystem;
using namespace chvit;

namespace {

struct Result {
  int code;
  std::string output;
};

// Runs the CLI with stdout and stderr captured together.
Result run(const std::string& args) {
  const std::string cmd = std::string(CHVIT_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTiny =
    "# tiny model\n"
    "image_h = 8\nimage_w = 8\npatch_size = 4\nchannels = 3\nembed_dim = 8\n"
    "depth = 1\nheads = 2\nmlp_hidden = 16\nnum_classes = 4\n"
    "epochs = 2\nwarmup_epochs = 1\nbatch_size = 8\n"
    "train_samples = 24\ntest_samples = 12\nseed = 7\n";

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const RunConfig rc = load_run_config(std::nullopt, {});
  EXPECT_EQ(rc.train.schedule.peak_lr, 5e-4);
  EXPECT_EQ(rc.train.schedule.final_lr, 1e-6);
  EXPECT_EQ(rc.train.schedule.warmup_epochs, 10u);
  EXPECT_EQ(rc.train.schedule.total_epochs, 100u);
  EXPECT_EQ(rc.train.schedule.wd_start, 0.04);
  EXPECT_EQ(rc.train.schedule.wd_end, 0.4);
  EXPECT_EQ(rc.train.batch_size, 32u);
  EXPECT_EQ(rc.train.sampler.seed, rc.train.seed);
  EXPECT_EQ(rc.synth.channels, rc.train.model.channels);
}

TEST(Config, OverrideBeatsFile) {
  const fs::path dir = fresh_dir("chvit_cfg");
  std::ofstream(dir / "run.cfg") << "epochs = 20\nwarmup_epochs = 2\nseed = 3\n";
  const RunConfig rc = load_run_config((dir / "run.cfg").string(), {{"epochs", "30"}});
  EXPECT_EQ(rc.train.schedule.total_epochs, 30u);
  EXPECT_EQ(rc.train.seed, 3u);
  EXPECT_EQ(rc.synth.seed, 3u);
  fs::remove_all(dir);
}

TEST(Config, MisspelledKeySuggestsNearest) {
  try {
    load_run_config(std::nullopt, {{"epohcs", "3"}});
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epohcs"), std::string::npos);
    EXPECT_NE(msg.find("'epochs'"), std::string::npos);
  }
  EXPECT_EQ(nearest_key("patchsize"), "patch_size");
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
}

TEST(Config, DuplicateKeyAndBadValuesRejected) {
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n", "x"), ConfigError);
  EXPECT_THROW(load_run_config(std::nullopt, {{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(load_run_config(std::nullopt, {{"variant", "resnet"}}), ConfigError);
}

TEST(Config, FormatRoundTrips) {
  const RunConfig a = load_run_config(std::nullopt, {{"peak_lr", "0.001"}, {"groups", "0,0,1"}});
  std::vector<std::pair<std::string, std::string>> pairs = config_pairs(format_run_config(a));
  EXPECT_EQ(pairs.size(), config_keys().size());
  const RunConfig b = load_run_config(std::nullopt, pairs);
  EXPECT_EQ(format_run_config(a), format_run_config(b));
}

TEST(Manifest, ListsOutputsWithDigests) {
  const fs::path dir = fresh_dir("chvit_manifest");
  std::ofstream(dir / "out.bin") << "abc";
  RunManifest m("unit", 9);
  m.set_config({{"seed", "9"}});
  m.stage_ok("work");
  m.add_output((dir / "out.bin").string());
  m.add_output((dir / "missing.bin").string());
  m.write((dir / "m.jsonl").string());
  std::istringstream lines(slurp(dir / "m.jsonl"));
  std::string line;
  bool saw_digest = false, saw_missing = false;
  std::getline(lines, line);
  const auto head = nlohmann::json::parse(line);
  EXPECT_EQ(head["status"], "ok");
  EXPECT_EQ(head["seed"], 9);
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("sha256")) {
      EXPECT_EQ(j["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
      saw_digest = true;
    }
    if (j.contains("missing")) saw_missing = true;
  }
  EXPECT_TRUE(saw_digest);
  EXPECT_TRUE(saw_missing);
  fs::remove_all(dir);
}

TEST(Cli, VersionPrintsFormatVersions) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("checkpoint"), std::string::npos);
  EXPECT_NE(r.output.find("dataset"), std::string::npos);
}

TEST(Cli, PipelineAndRerunDeterminism) {
  const fs::path dir = fresh_dir("chvit_cli_pipeline");
  std::ofstream(dir / "tiny.cfg") << kTiny;
  const std::string cfg = (dir / "tiny.cfg").string();
  const std::string d = dir.string();

  ASSERT_EQ(run("gen-data --config " + cfg + " --out-dir " + d + "/data").code, 0);
  ASSERT_TRUE(fs::exists(dir / "data/train.mcds"));
  EXPECT_EQ(load_dataset((dir / "data/train.mcds").string()).size(), 24u);

  for (const char* tag : {"a", "b"}) {
    const std::string t = d + "/" + tag;
    const auto tr = run("train --config " + cfg + " --set data=" + d + "/data/train.mcds --out " + t +
                        ".chvt --log " + t + ".log.csv");
    ASSERT_EQ(tr.code, 0) << tr.output;
    const auto ev = run("eval --checkpoint " + t + ".chvt --data " + d + "/data/test.mcds --out " + t +
                        ".eval.csv --per-class " + t + ".class.csv");
    ASSERT_EQ(ev.code, 0) << ev.output;
  }
  EXPECT_EQ(slurp(dir / "a.log.csv"), slurp(dir / "b.log.csv"));
  EXPECT_EQ(slurp(dir / "a.chvt"), slurp(dir / "b.chvt"));
  EXPECT_EQ(slurp(dir / "a.eval.csv"), slurp(dir / "b.eval.csv"));
  EXPECT_EQ(slurp(dir / "a.log.csv").substr(0, 24), "step,epoch,lr,wd,loss\n0,");
  EXPECT_EQ(slurp(dir / "a.eval.csv").substr(0, 23), "combination,m,accuracy\n");
  EXPECT_EQ(slurp(dir / "a.eval.grouped.csv").substr(0, 17), "m,mean,std,count\n");
  EXPECT_TRUE(fs::exists(dir / "a.manifest.jsonl"));

  const auto rel = run("relevance --checkpoint " + d + "/a.chvt --image " + d +
                       "/data/test.mcds --index 1 --class 2 --method rollout --channels 0-2 --out-prefix " + d +
                       "/rel");
  ASSERT_EQ(rel.code, 0) << rel.output;
  EXPECT_TRUE(fs::exists(dir / "rel_ch0.pgm"));
  EXPECT_TRUE(fs::exists(dir / "rel_ch2.pgm"));
  EXPECT_TRUE(fs::exists(dir / "rel.csv"));

  const auto emb = run("analyze embeddings --checkpoint " + d + "/a.chvt --out " + d + "/emb.csv");
  EXPECT_EQ(emb.code, 0) << emb.output;
  const auto smp = run("analyze sampler --channels 4 --out " + d + "/sampler.csv");
  EXPECT_EQ(smp.code, 0) << smp.output;
  fs::remove_all(dir);
}

TEST(Cli, MissingCheckpointIsClearError) {
  const fs::path dir = fresh_dir("chvit_cli_missing");
  const auto r = run("eval --checkpoint " + (dir / "nope.chvt").string() + " --data " +
                     (dir / "nope.mcds").string() + " --out " + (dir / "e.csv").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("not found"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("nope.chvt"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "e.csv"));
  fs::remove_all(dir);
}

TEST(Cli, UnknownConfigKeyFails) {
  const auto r = run("gen-data --set epohcs=3 --out-dir " + (fs::temp_directory_path() / "chvit_x").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("epochs"), std::string::npos);
}
