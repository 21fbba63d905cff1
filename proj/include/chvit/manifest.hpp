#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace chvit {

/// Hex SHA-256 of a file's contents.
std::string sha256_file(const std::string& path);
std::string sha256_hex(std::string_view bytes);

/// UTC timestamp, ISO 8601 with seconds.
std::string utc_now();

/// Line-delimited JSON record of one CLI run: a header line (command, seed, format
/// versions, timestamps, status), one line per stage, one line per output file with
/// its digest, and the resolved config as key/value pairs.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed);

  void set_config(std::vector<std::pair<std::string, std::string>> resolved);
  void stage_ok(const std::string& name);
  void stage_failed(const std::string& name, const std::string& error);
  void add_output(const std::string& path);

  bool failed() const { return !failed_stage_.empty(); }
  const std::string& failed_stage() const { return failed_stage_; }

  /// Digests every output that exists and writes the manifest atomically.
  void write(const std::string& path);
  std::string render();

 private:
  struct Stage {
    std::string name;
    bool ok;
    std::string error;
  };

  std::string command_;
  std::uint64_t seed_;
  std::string started_;
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<Stage> stages_;
  std::vector<std::string> outputs_;
  std::string failed_stage_;
};

/// Splits "key = value" lines as produced by format_run_config.
std::vector<std::pair<std::string, std::string>> config_pairs(const std::string& formatted);

}  // namespace chvit
