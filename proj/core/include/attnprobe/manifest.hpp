#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attnprobe/tensor_io.hpp"

namespace attnprobe {

struct ManifestEntry {
  std::string utterance_id;
  std::filesystem::path features;
  std::filesystem::path labels;
  std::optional<std::filesystem::path> attention;

  bool operator==(const ManifestEntry&) const = default;
};

/// Ordered list of utterances plus the shared inventory.
///
/// On disk (see docs/formats.md):
///
///     inventory=inventory.txt
///
///     id=utt0000
///     features=utt0000.fea
///     labels=utt0000.lab
///     attention=utt0000.att
///
/// Records are separated by blank lines; `#` starts a comment line. Relative
/// paths resolve against the manifest's own directory.
struct DatasetManifest {
  std::filesystem::path inventory;
  std::vector<ManifestEntry> entries;
  /// Directory relative paths resolve against; not serialized.
  std::filesystem::path base_dir;

  std::size_t size() const noexcept { return entries.size(); }
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  bool operator==(const DatasetManifest& other) const {
    return inventory == other.inventory && entries == other.entries;
  }
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Subset of a manifest in the given index order.
DatasetManifest select_entries(const DatasetManifest& manifest,
                               const std::vector<std::size_t>& indices);

struct Utterance {
  FeatureMatrix features;
  FrameLabels labels;
};

PhonemeInventory load_inventory(const DatasetManifest& manifest);
Utterance load_utterance(const DatasetManifest& manifest, std::size_t index);
AttentionDump load_attention(const DatasetManifest& manifest, std::size_t index);

/// Loads every referenced file and checks the cross-file invariants (label
/// range, matching frame counts). Throws on the first violation.
void validate_manifest(const DatasetManifest& manifest);

}  // namespace attnprobe
