#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "attnprobe/head_metrics.hpp"
#include "attnprobe/minimodel.hpp"
#include "attnprobe/probe.hpp"
#include "attnprobe/synth.hpp"

namespace attnprobe {

struct AblationCurve {
  Category category = Category::Diagonal;
  /// Heads of the category, strongest first.
  std::vector<HeadId> ranked_heads;
  /// Entry i: accuracy with the top i heads masked (entry 0 is unmasked).
  std::vector<double> accuracy_at_step;
  double baseline_all_masked = 0.0;

  bool operator==(const AblationCurve&) const = default;
};

/// Heads assigned to `category`, sorted by that category's raw score
/// descending; ties broken by (layer, head) ascending.
std::vector<HeadId> rank_heads(std::span<const HeadScores> scores,
                               std::span<const HeadCategory> categories, Category category);

struct AblationOptions {
  std::size_t jobs = 1;
  /// Retrain the probe under each step's mask instead of reusing `probe`.
  bool retrain = false;
  /// Training frames for `retrain`; required when it is set.
  const std::vector<Utterance>* train_utterances = nullptr;
  ProbeConfig probe_config;
};

/// Evaluates the probe with the top-i ranked heads masked for i = 0..N, plus
/// the all-heads-masked baseline. `source.mask` is ignored.
AblationCurve ablate_cumulative(const RepresentationSource& source, const ProbeModel& probe,
                                std::span<const Utterance> test, std::size_t num_classes,
                                std::span<const HeadId> ranked_heads, Category category,
                                const AblationOptions& options = {});
AblationCurve ablate_cumulative(const RepresentationSource& source, const ProbeModel& probe,
                                const DatasetManifest& test_manifest,
                                std::span<const HeadId> ranked_heads, Category category,
                                const AblationOptions& options = {});

/// CSV `category,step,masked_head,accuracy`. Step 0 has masked_head "none";
/// each curve ends with a `baseline` row (masked_head "all"). A curve with no
/// heads is written as its baseline row alone.
void emit_curves(std::span<const AblationCurve> curves, const std::filesystem::path& path);
void emit_curve(const AblationCurve& curve, const std::filesystem::path& path);
std::vector<AblationCurve> read_curves(const std::filesystem::path& path);

/// End-to-end synthetic experiment: generate a Local-mode dataset, inject a
/// battery into the encoder's heads, score and categorise the heads from
/// sampled forward passes, train the probe on unmasked representations and
/// ablate each category.
struct BatteryAblationConfig {
  SynthDatasetConfig data;
  ModelConfig model;
  ProbeConfig probe;
  std::size_t per_category = 12;
  double split_ratio = 0.8;
  std::size_t score_sample = 10;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Retrain the probe under every mask instead of reusing the unmasked one.
  bool retrain = false;
};

struct BatteryAblationResult {
  std::vector<HeadScores> scores;
  std::vector<HeadCategory> categories;
  /// Heads whose assigned category matches the injected pattern's kind.
  std::size_t recovered_heads = 0;
  std::size_t injected_heads = 0;
  double unmasked_accuracy = 0.0;
  double baseline_all_masked = 0.0;
  std::array<AblationCurve, 3> curves;  // indexed by Category

  const AblationCurve& curve(Category c) const { return curves[static_cast<std::size_t>(c)]; }
  /// Accuracy with every head of the category masked.
  double fully_masked(Category c) const;
};

BatteryAblationResult run_battery_ablation(const BatteryAblationConfig& config);

}  // namespace attnprobe
