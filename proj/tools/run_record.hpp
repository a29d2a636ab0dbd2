#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace attnprobe::cli {

/// Provenance written next to every output as `<output>.run.json`.
class RunRecord {
 public:
  explicit RunRecord(std::string subcommand);

  void config(const std::string& key, const std::string& value);
  void config(const std::string& key, double value);
  void config(const std::string& key, std::int64_t value);
  void config(const std::string& key, bool value);
  void seed(const std::string& key, std::uint64_t value);
  /// Records the input's FNV-1a digest; missing files are recorded as such.
  void input(const std::filesystem::path& path);
  void output(const std::filesystem::path& path);

  /// Writes the record to `path`. wall_time_s is measured from construction.
  void write(const std::filesystem::path& path) const;

 private:
  std::string subcommand_;
  std::map<std::string, std::string> strings_;
  std::map<std::string, double> reals_;
  std::map<std::string, std::int64_t> integers_;
  std::map<std::string, bool> flags_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace attnprobe::cli
