#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "attnprobe/manifest.hpp"
#include "attnprobe/matrix.hpp"
#include "attnprobe/tensor_io.hpp"

namespace attnprobe {

enum class Category { Global, Vertical, Diagonal };

std::string_view to_string(Category c) noexcept;
/// Accepts "global", "vertical", "diagonal" (any case).
Category parse_category(std::string_view text);

inline constexpr std::array<Category, 3> kAllCategories{Category::Global, Category::Vertical,
                                                        Category::Diagonal};

/// Per-head scores averaged over the utterance sample. Entropies are in nats.
struct HeadScores {
  HeadId head;
  double globalness = 0.0;    // >= 0
  double verticality = 0.0;   // <= 0
  double diagonalness = 0.0;  // <= 0
  std::size_t utterance_count = 0;

  double score(Category c) const noexcept;
  bool operator==(const HeadScores&) const = default;
};

struct HeadCategory {
  HeadId head;
  Category category = Category::Diagonal;
  /// Cross-head z-scores, indexed by Category (Global, Vertical, Diagonal).
  std::array<double, 3> z_scores{};
};

/// Shannon entropy -sum p ln p with 0 ln 0 = 0. Throws NegativeEntry.
double row_entropy(std::span<const double> row);

// Single-utterance scores of one T x T row-stochastic matrix.
double globalness(const Matrix& attention);
double diagonalness(const Matrix& attention);
double verticality(const Matrix& attention);

// Means over utterances. Throw EmptyUtteranceSet for an empty list.
double globalness(std::span<const Matrix> per_utterance);
double diagonalness(std::span<const Matrix> per_utterance);
double verticality(std::span<const Matrix> per_utterance);

/// Seeded choice of `sample_size` distinct utterance indices out of `count`,
/// returned in ascending (manifest) order.
std::vector<std::size_t> sample_utterances(std::size_t count, std::size_t sample_size,
                                           std::uint64_t seed);

/// Scores every head over all given dumps, accumulating in the given order.
/// Throws MismatchedModelShape when dumps disagree on L or H.
std::vector<HeadScores> score_dumps(std::span<const AttentionDump> dumps, std::size_t jobs = 1);

/// Scores every head over the same seeded sample of manifest utterances.
std::vector<HeadScores> score_all(const DatasetManifest& manifest, std::size_t sample_size,
                                  std::uint64_t seed, std::size_t jobs = 1);

/// z-scores each metric across heads and assigns the argmax category, ties
/// resolved Diagonal > Vertical > Global. A metric with zero spread gets z = 0
/// everywhere. Throws SingleHead for fewer than two heads.
std::vector<HeadCategory> categorize(std::span<const HeadScores> scores);

struct CategoryCounts {
  std::size_t global = 0;
  std::size_t vertical = 0;
  std::size_t diagonal = 0;

  std::size_t total() const noexcept { return global + vertical + diagonal; }
  std::size_t of(Category c) const noexcept;
  bool operator==(const CategoryCounts&) const = default;
};

CategoryCounts category_counts(std::span<const HeadCategory> categories);

/// Mean of each metric over all heads and over only the heads assigned to the
/// metric's own category (NaN when that category is empty).
struct MetricSummary {
  Category category;
  std::size_t heads_in_category = 0;
  double mean_all_heads = 0.0;
  double mean_within_category = 0.0;
};
std::array<MetricSummary, 3> summarize(std::span<const HeadScores> scores,
                                       std::span<const HeadCategory> categories);

/// Contents of a scores CSV: one row per head, category optional.
struct ScoreTable {
  std::vector<HeadScores> scores;
  std::vector<std::optional<Category>> categories;
};

/// Header `layer,head,globalness,verticality,diagonalness,category`; reals at 9
/// significant digits. `categories` may be empty (column left blank).
void write_scores_csv(std::span<const HeadScores> scores, std::span<const HeadCategory> categories,
                      const std::filesystem::path& path);
ScoreTable read_scores_csv(const std::filesystem::path& path);

}  // namespace attnprobe
