#include "run_record.hpp"

#include <attnprobe/error.hpp>
#include <attnprobe/support.hpp>

#include <fstream>
#include <nlohmann/json.hpp>

namespace attnprobe::cli {

RunRecord::RunRecord(std::string subcommand)
    : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {}

void RunRecord::config(const std::string& key, const std::string& value) { strings_[key] = value; }
void RunRecord::config(const std::string& key, double value) { reals_[key] = value; }
void RunRecord::config(const std::string& key, std::int64_t value) { integers_[key] = value; }
void RunRecord::config(const std::string& key, bool value) { flags_[key] = value; }
void RunRecord::seed(const std::string& key, std::uint64_t value) { seeds_[key] = value; }

void RunRecord::input(const std::filesystem::path& path) {
  std::error_code ec;
  inputs_[path.generic_string()] =
      std::filesystem::is_regular_file(path, ec) ? file_digest(path) : std::string("missing");
}

void RunRecord::output(const std::filesystem::path& path) { outputs_.push_back(path.generic_string()); }

void RunRecord::write(const std::filesystem::path& path) const {
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : strings_) config[k] = v;
  for (const auto& [k, v] : reals_) config[k] = v;
  for (const auto& [k, v] : integers_) config[k] = v;
  for (const auto& [k, v] : flags_) config[k] = v;

  nlohmann::json doc;
  doc["subcommand"] = subcommand_;
  doc["config"] = config;
  doc["seeds"] = seeds_;
  doc["inputs"] = inputs_;
  doc["outputs"] = outputs_;
  doc["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write run record " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace attnprobe::cli
