#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnprobe/matrix.hpp"

namespace attnprobe {

/// Row-sum tolerance applied when ingesting external (binary32) attention.
inline constexpr double kIngestRowTolerance = 1e-4;

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(const HeadId& id);

/// Attention for one utterance, indexed [layer][head][query][key].
class AttentionDump {
 public:
  AttentionDump() = default;
  AttentionDump(std::string utterance_id, std::size_t layers, std::size_t heads, std::size_t frames);

  const std::string& utterance_id() const noexcept { return utterance_id_; }
  void set_utterance_id(std::string id) { utterance_id_ = std::move(id); }

  std::size_t num_layers() const noexcept { return layers_; }
  std::size_t num_heads() const noexcept { return heads_; }
  std::size_t num_frames() const noexcept { return frames_; }

  std::span<double> head(std::size_t layer, std::size_t head) noexcept;
  std::span<const double> head(std::size_t layer, std::size_t head) const noexcept;
  Matrix head_matrix(std::size_t layer, std::size_t head) const;
  void set_head(std::size_t layer, std::size_t head, const Matrix& attention);

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  /// Throws DimensionZero, NegativeEntry or RowNotStochastic.
  void validate(double tolerance = kIngestRowTolerance) const;

  bool operator==(const AttentionDump&) const = default;

 private:
  std::string utterance_id_;
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::size_t frames_ = 0;
  std::vector<double> values_;
};

struct FeatureMatrix {
  std::string utterance_id;
  Matrix values;  // T x F

  std::size_t num_frames() const noexcept { return values.rows(); }
  std::size_t feature_dim() const noexcept { return values.cols(); }
  bool operator==(const FeatureMatrix&) const = default;
};

class PhonemeInventory {
 public:
  static constexpr const char* kSilence = "sil";
  static constexpr const char* kUnknown = "unk";

  PhonemeInventory() = default;
  /// Throws EmptyInventory or ParseError (duplicates, missing reserved symbols).
  explicit PhonemeInventory(std::vector<std::string> symbols);

  std::size_t size() const noexcept { return symbols_.size(); }
  bool empty() const noexcept { return symbols_.empty(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  const std::string& symbol(std::size_t id) const { return symbols_.at(id); }
  std::optional<std::uint32_t> find(const std::string& symbol) const;
  std::uint32_t silence() const { return *find(kSilence); }
  std::uint32_t unknown() const { return *find(kUnknown); }

  bool operator==(const PhonemeInventory&) const = default;

 private:
  std::vector<std::string> symbols_;
};

struct FrameLabels {
  std::string utterance_id;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  /// Throws LabelOutOfRange for any id >= inventory_size.
  void validate(std::size_t inventory_size) const;
  bool operator==(const FrameLabels&) const = default;
};

/// A named binary32 tensor as stored in a WGT1 container.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const noexcept;
  bool operator==(const NamedTensor&) const = default;
};
using TensorBundle = std::vector<NamedTensor>;

// ATT1: "ATT1", u32 L, u32 H, u32 T, L*H*T*T f32, little-endian.
AttentionDump read_attention_dump(const std::filesystem::path& path);
void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& path);
std::size_t attention_file_size(std::size_t layers, std::size_t heads, std::size_t frames) noexcept;

// FEA1: "FEA1", u32 T, u32 F, T*F f32 row-major.
FeatureMatrix read_features(const std::filesystem::path& path);
void write_features(const FeatureMatrix& features, const std::filesystem::path& path);

// WGT1: "WGT1", u32 count, then per tensor: u32 name_len, name, u32 rank, u32 dims[rank], f32 data.
TensorBundle read_tensor_bundle(const std::filesystem::path& path);
void write_tensor_bundle(const TensorBundle& bundle, const std::filesystem::path& path);

// Labels: line 1 utterance id, line 2 space-separated class ids.
FrameLabels read_labels(const std::filesystem::path& path);
void write_labels(const FrameLabels& labels, const std::filesystem::path& path);

// Inventory: one symbol per line, line index = class id.
PhonemeInventory read_inventory(const std::filesystem::path& path);
void write_inventory(const PhonemeInventory& inventory, const std::filesystem::path& path);

/// Rounds every entry through binary32, i.e. the values a write/read cycle yields.
void quantize_to_binary32(std::span<double> values) noexcept;

}  // namespace attnprobe
