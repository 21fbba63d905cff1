#include "chvit/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "chvit/binary_io.hpp"
#include "chvit/checkpoint.hpp"
#include "chvit/dataset.hpp"

namespace chvit {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("sha256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::string& path) { return sha256_hex(binary::read_file(path)); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(std::string command, std::uint64_t seed)
    : command_(std::move(command)), seed_(seed), started_(utc_now()) {}

void RunManifest::set_config(std::vector<std::pair<std::string, std::string>> resolved) {
  config_ = std::move(resolved);
}

void RunManifest::stage_ok(const std::string& name) { stages_.push_back({name, true, {}}); }

void RunManifest::stage_failed(const std::string& name, const std::string& error) {
  stages_.push_back({name, false, error});
  if (failed_stage_.empty()) failed_stage_ = name;
}

void RunManifest::add_output(const std::string& path) { outputs_.push_back(path); }

std::string RunManifest::render() {
  using nlohmann::json;
  std::string out;
  json head = {{"record", "run"},
               {"command", command_},
               {"seed", seed_},
               {"format_versions", {{"checkpoint", kCheckpointVersion}, {"dataset", kDatasetVersion}}},
               {"started", started_},
               {"ended", utc_now()},
               {"status", failed() ? "failed" : "ok"}};
  if (failed()) head["failed_stage"] = failed_stage_;
  out += head.dump() + "\n";
  json cfg = json::object();
  for (const auto& [k, v] : config_) cfg[k] = v;
  out += json{{"record", "config"}, {"values", cfg}}.dump() + "\n";
  for (const auto& s : stages_) {
    json line = {{"record", "stage"}, {"name", s.name}, {"status", s.ok ? "ok" : "failed"}};
    if (!s.ok) line["error"] = s.error;
    out += line.dump() + "\n";
  }
  for (const auto& p : outputs_) {
    json line = {{"record", "output"}, {"path", p}};
    std::error_code ec;
    if (std::filesystem::is_regular_file(p, ec)) {
      line["sha256"] = sha256_file(p);
      line["bytes"] = std::filesystem::file_size(p);
    } else {
      line["missing"] = true;
    }
    out += line.dump() + "\n";
  }
  return out;
}

void RunManifest::write(const std::string& path) { binary::write_file_atomic(path, render()); }

std::vector<std::pair<std::string, std::string>> config_pairs(const std::string& formatted) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos < formatted.size()) {
    auto nl = formatted.find('\n', pos);
    if (nl == std::string::npos) nl = formatted.size();
    const std::string line = formatted.substr(pos, nl - pos);
    pos = nl + 1;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return out;
}

}  // namespace chvit
