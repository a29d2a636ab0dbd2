#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "attnprobe/manifest.hpp"
#include "attnprobe/matrix.hpp"
#include "attnprobe/tensor_io.hpp"

namespace attnprobe {

/// Phoneme relation map. Rows are the attending (query) phoneme, columns the
/// attended-to (key) phoneme: cell (m, n) pools A[q, k] over frame pairs with
/// y_q = m and y_k = n, including q = k.
class PRMatrix {
 public:
  PRMatrix() = default;
  explicit PRMatrix(PhonemeInventory inventory);

  const PhonemeInventory& inventory() const noexcept { return inventory_; }
  std::size_t size() const noexcept { return inventory_.size(); }

  const Matrix& sums() const noexcept { return sums_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  std::uint64_t count(std::size_t m, std::size_t n) const { return counts_[m * size() + n]; }

  /// sums / counts, 0 where a pair was never observed.
  Matrix mean() const;
  /// 1 where count > 0.
  std::vector<std::uint8_t> populated() const;

  /// Adds one utterance-head: every ordered frame pair (q, k).
  void accumulate(const Matrix& attention, const FrameLabels& labels);
  void accumulate(std::span<const double> attention, std::size_t frames, const FrameLabels& labels);
  /// Sums and counts add; throws InventoryMismatch for different inventories.
  void merge(const PRMatrix& other);

  /// Fraction of populated rows m whose largest mean cell is (m, m).
  double self_dominance() const;

 private:
  PhonemeInventory inventory_;
  Matrix sums_;
  std::vector<std::uint64_t> counts_;
};

/// Functional form of PRMatrix::accumulate.
PRMatrix prm_accumulate(const Matrix& attention, const FrameLabels& labels, PRMatrix acc);

struct PrmSelection {
  /// Layer to pool; nullopt means the final layer.
  std::optional<std::size_t> layer;
  /// Heads to pool; nullopt means every head of the layer.
  std::optional<std::vector<std::size_t>> heads;
  /// Use at most this many utterances, in manifest order; 0 means all.
  std::size_t max_utterances = 0;
};

/// Pools the selected heads of one layer over the first utterances of the
/// manifest. Per-utterance partial maps are merged in manifest order, so the
/// result does not depend on `jobs`. Throws LayerOutOfRange or EmptyHeadSet.
PRMatrix prm_aggregate(const DatasetManifest& manifest, const PrmSelection& selection,
                       std::size_t jobs = 1);

struct PrmExportOptions {
  bool transpose = false;
  std::optional<std::filesystem::path> mask_path;
  std::optional<std::filesystem::path> pgm_path;
};

/// CSV with a header row and column of symbols; unobserved cells are written
/// as 0 and flagged in the optional mask CSV.
void export_prm(const PRMatrix& prm, const std::filesystem::path& path,
                const PrmExportOptions& options = {});

/// Binary "P5" 8-bit grayscale, min-max normalized over the mean matrix.
void write_pgm(const Matrix& values, const std::filesystem::path& path);

}  // namespace attnprobe
