#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "attnprobe/head_metrics.hpp"
#include "attnprobe/manifest.hpp"
#include "attnprobe/matrix.hpp"
#include "attnprobe/minimodel.hpp"

namespace attnprobe {

/// Parameters of a synthetic attention pattern. Only the field matching
/// `kind` is consulted: bandwidth (Diagonal, frames), target_column_fraction
/// (Vertical, in [0, 1]) or concentration (Global, Dirichlet alpha).
struct PatternSpec {
  Category kind = Category::Diagonal;
  double bandwidth = 1.0;
  double target_column_fraction = 0.0;
  double concentration = 1.0;
  double noise_level = 0.0;  // in [0, 1)
  std::uint64_t seed = 0;

  /// Throws BadSpec.
  void validate() const;
};

/// T x T row-stochastic matrix:
///  - Diagonal: each row a Gaussian over keys centred on the query, stddev
///    `bandwidth`, renormalised after truncation;
///  - Vertical: each row puts 1 - noise on column floor(fraction * T) and
///    spreads the rest evenly over the other columns;
///  - Global: each row an independent symmetric Dirichlet draw.
/// Diagonal and Global rows are then mixed with the uniform row by `noise_level`.
Matrix synth_attention(const PatternSpec& spec, std::size_t frames);

struct BatteryItem {
  PatternSpec spec;
  Matrix attention;
  Category true_category;
};

/// `per_category` patterns of each kind, in Global, Vertical, Diagonal blocks.
/// Parameters are drawn inside ranges that keep each kind's own metric far
/// ahead in cross-head z-score at T around 50:
///   Diagonal bandwidth in [0.5, 2], noise 0;
///   Vertical target fraction in [0.2, 0.8], noise in [0, 0.15];
///   Global concentration in [1, 4], noise 0.
std::vector<BatteryItem> generate_battery(std::size_t frames, std::size_t per_category,
                                          std::uint64_t seed);

/// Battery patterns pinned to model heads, for attention overrides.
struct BatteryPlan {
  struct Assignment {
    HeadId head;
    PatternSpec spec;
  };
  std::vector<Assignment> assignments;

  /// Overrides for one utterance of `frames` frames. Global heads redraw their
  /// Dirichlet rows per utterance from derive_seed(spec.seed, utterance_key).
  AttentionOverride overrides_for(std::size_t frames, std::uint64_t utterance_key) const;
  Category category_of(const HeadId& head) const;
};

/// Assigns the patterns of generate_battery(per_category) to a seeded random
/// subset of the layers x heads grid. Throws BadSpec if they do not fit.
BatteryPlan plan_battery_injection(std::size_t layers, std::size_t heads, std::size_t per_category,
                                   std::uint64_t seed);

enum class DependencyMode { Local, Harmony };

struct SynthDatasetConfig {
  std::size_t num_utterances = 20;
  std::size_t min_frames = 60;
  std::size_t max_frames = 120;
  std::size_t num_classes = 4;
  std::size_t feature_dim = 16;
  /// Stddev of the Gaussian noise added to each frame's class prototype.
  double prototype_noise = 0.1;
  double mean_segment_frames = 8.0;
  DependencyMode mode = DependencyMode::Local;
  std::vector<std::uint32_t> trigger_classes;
  std::vector<std::uint32_t> dependent_classes;
  std::uint64_t seed = 0;

  /// Throws BadConfig.
  void validate() const;
};

struct SynthDataset {
  PhonemeInventory inventory;
  Matrix prototypes;  // P x F
  std::vector<Utterance> utterances;
};

/// "sil", "unk", then "ph2" ... "ph{P-1}".
PhonemeInventory synthetic_inventory(std::size_t classes);

/// Utterances are runs of segments with geometric durations; every frame of
/// a segment emits its acoustic prototype plus Gaussian noise. In Harmony
/// mode each utterance opens with a trigger segment, and a dependent segment
/// sounds like dependent_classes[0] while its label is
/// dependent_classes[r mod |dependent|], r being the position of the most
/// recent trigger class in trigger_classes.
SynthDataset generate_dataset(const SynthDatasetConfig& config);

/// Writes inventory.txt, <id>.fea, <id>.lab and manifest.txt into `dir` and
/// returns the manifest (paths relative to `dir`).
DatasetManifest write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

}  // namespace attnprobe
