#include "attnprobe/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "attnprobe/error.hpp"

namespace attnprobe {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open manifest " + path.string());

  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::set<std::string> ids;
  std::optional<ManifestEntry> current;
  std::size_t record_line = 0;
  bool have_inventory = false;

  auto where = [&](std::size_t line) { return path.string() + ":" + std::to_string(line); };
  auto finish = [&] {
    if (!current) return;
    if (current->utterance_id.empty()) fail(ErrorCode::ParseError, where(record_line) + ": record without id");
    if (current->features.empty()) fail(ErrorCode::ParseError, where(record_line) + ": record without features");
    if (current->labels.empty()) fail(ErrorCode::ParseError, where(record_line) + ": record without labels");
    if (!ids.insert(current->utterance_id).second) {
      fail(ErrorCode::DuplicateUtterance, where(record_line) + ": utterance '" +
                                              current->utterance_id + "' listed twice");
    }
    manifest.entries.push_back(std::move(*current));
    current.reset();
  };

  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    line = trim(line);
    if (line.empty()) {
      finish();
      continue;
    }
    if (line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ParseError, where(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) fail(ErrorCode::ParseError, where(lineno) + ": empty value for '" + key + "'");

    if (key == "inventory") {
      if (current || have_inventory) {
        fail(ErrorCode::ParseError, where(lineno) + ": inventory must appear once, before records");
      }
      manifest.inventory = value;
      have_inventory = true;
      continue;
    }
    if (!current) {
      current.emplace();
      record_line = lineno;
    }
    auto set_once = [&](auto& field, bool filled) {
      if (filled) fail(ErrorCode::ParseError, where(lineno) + ": repeated key '" + key + "'");
      field = value;
    };
    if (key == "id") {
      set_once(current->utterance_id, !current->utterance_id.empty());
    } else if (key == "features") {
      set_once(current->features, !current->features.empty());
    } else if (key == "labels") {
      set_once(current->labels, !current->labels.empty());
    } else if (key == "attention") {
      if (current->attention) fail(ErrorCode::ParseError, where(lineno) + ": repeated key 'attention'");
      current->attention = value;
    } else {
      fail(ErrorCode::ParseError, where(lineno) + ": unknown key '" + key + "'");
    }
  }
  finish();
  if (!have_inventory) fail(ErrorCode::ParseError, path.string() + ": missing inventory line");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ostringstream out;
  out << "inventory=" << manifest.inventory.generic_string() << "\n";
  for (const auto& e : manifest.entries) {
    out << "\nid=" << e.utterance_id << "\n"
        << "features=" << e.features.generic_string() << "\n"
        << "labels=" << e.labels.generic_string() << "\n";
    if (e.attention) out << "attention=" << e.attention->generic_string() << "\n";
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  file << out.str();
  if (!file) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

DatasetManifest select_entries(const DatasetManifest& manifest,
                               const std::vector<std::size_t>& indices) {
  DatasetManifest out;
  out.inventory = manifest.inventory;
  out.base_dir = manifest.base_dir;
  for (std::size_t i : indices) out.entries.push_back(manifest.entries.at(i));
  return out;
}

PhonemeInventory load_inventory(const DatasetManifest& manifest) {
  return read_inventory(manifest.resolve(manifest.inventory));
}

Utterance load_utterance(const DatasetManifest& manifest, std::size_t index) {
  const auto& e = manifest.entries.at(index);
  Utterance u{read_features(manifest.resolve(e.features)), read_labels(manifest.resolve(e.labels))};
  u.features.utterance_id = e.utterance_id;
  if (u.labels.utterance_id != e.utterance_id) {
    fail(ErrorCode::ParseError, "labels file for '" + e.utterance_id + "' names utterance '" +
                                    u.labels.utterance_id + "'");
  }
  if (u.labels.size() != u.features.num_frames()) {
    fail(ErrorCode::LengthMismatch, e.utterance_id + ": " + std::to_string(u.labels.size()) +
                                        " labels for " + std::to_string(u.features.num_frames()) +
                                        " feature frames");
  }
  return u;
}

AttentionDump load_attention(const DatasetManifest& manifest, std::size_t index) {
  const auto& e = manifest.entries.at(index);
  if (!e.attention) fail(ErrorCode::MissingFlag, e.utterance_id + " has no attention file");
  AttentionDump dump = read_attention_dump(manifest.resolve(*e.attention));
  dump.set_utterance_id(e.utterance_id);
  return dump;
}

void validate_manifest(const DatasetManifest& manifest) {
  const PhonemeInventory inventory = load_inventory(manifest);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (!ids.insert(e.utterance_id).second) {
      fail(ErrorCode::DuplicateUtterance, "utterance '" + e.utterance_id + "' listed twice");
    }
    const Utterance u = load_utterance(manifest, i);
    u.labels.validate(inventory.size());
    if (e.attention) {
      const AttentionDump dump = load_attention(manifest, i);
      if (dump.num_frames() != u.labels.size()) {
        fail(ErrorCode::LengthMismatch, e.utterance_id + ": attention has T=" +
                                            std::to_string(dump.num_frames()) + ", labels have " +
                                            std::to_string(u.labels.size()));
      }
    }
  }
}

}  // namespace attnprobe
