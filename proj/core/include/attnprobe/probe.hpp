#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnprobe/manifest.hpp"
#include "attnprobe/matrix.hpp"
#include "attnprobe/minimodel.hpp"
#include "attnprobe/synth.hpp"

namespace attnprobe {

struct ProbeConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 64;  // frames per step
  std::size_t num_steps = 50'000;
  std::uint64_t seed = 0;
  double l2_penalty = 0.0;

  /// Throws BadConfig.
  void validate() const;
};

/// Linear softmax classifier over frame representations.
struct ProbeModel {
  Matrix weight;             // d x P
  std::vector<double> bias;  // P

  std::size_t input_dim() const noexcept { return weight.rows(); }
  std::size_t num_classes() const noexcept { return weight.cols(); }

  static ProbeModel zeros(std::size_t input_dim, std::size_t classes);
  std::vector<double> probabilities(std::span<const double> x) const;
  std::uint32_t predict(std::span<const double> x) const;
};

/// Stable ID-derived key; per-utterance randomness keyed on it survives
/// re-splitting and re-ordering of manifests.
std::uint64_t utterance_key(const std::string& utterance_id) noexcept;

/// How an utterance's features become the probe's per-frame inputs: raw
/// features when `encoder` is null, else the encoder's final-layer output under
/// `mask`, with battery patterns injected as attention overrides if given.
struct RepresentationSource {
  const Encoder* encoder = nullptr;
  HeadMask mask;
  const BatteryPlan* injected = nullptr;

  Matrix encode(const FeatureMatrix& features) const;
  ForwardResult run(const FeatureMatrix& features) const;
};

/// All frames of a manifest, stacked in manifest order.
struct FrameSet {
  Matrix inputs;  // N x d
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

FrameSet collect_frames(const DatasetManifest& manifest, const RepresentationSource& source,
                        std::size_t jobs = 1);
FrameSet collect_frames(std::span<const Utterance> utterances, std::size_t num_classes,
                        const RepresentationSource& source, std::size_t jobs = 1);

struct LossAndGradient {
  double loss = 0.0;  // mean cross-entropy + l2/2 * |W|^2
  Matrix grad_weight;
  std::vector<double> grad_bias;
};

/// Mean softmax cross-entropy over `rows` of `frames`, with its analytic gradient.
LossAndGradient softmax_cross_entropy(const ProbeModel& model, const FrameSet& frames,
                                      std::span<const std::size_t> rows, double l2_penalty);

/// Seeded mini-batch gradient descent from a zero-initialised model. Batches
/// are drawn uniformly with replacement. Throws EmptyTrainingSet, NonFiniteLoss.
ProbeModel train_probe(const FrameSet& train, const ProbeConfig& config);
ProbeModel train_probe(const DatasetManifest& train_manifest, const RepresentationSource& source,
                       const ProbeConfig& config, std::size_t jobs = 1);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::uint64_t> confusion;  // P x P, rows = true class, cols = predicted
  std::size_t num_classes = 0;
};

/// Throws InventoryMismatch when the model's class count differs from the data's.
EvalResult eval_probe(const ProbeModel& model, const FrameSet& frames);
EvalResult eval_probe(const ProbeModel& model, const DatasetManifest& manifest,
                      const RepresentationSource& source, std::size_t jobs = 1);

/// Utterance-level seeded split; round(ratio * n) utterances (clamped to
/// [1, n-1]) go to training. Throws TooFewUtterances, BadRatio.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double ratio, std::uint64_t seed);

// WGT1 tensors "probe.weight" [d, P] and "probe.bias" [P].
void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

struct EvalReportRow {
  std::string pretrain;
  std::string finetune;
  std::size_t masked_heads = 0;
  double accuracy = 0.0;
};

/// Header `pretrain,finetune,masked_heads,accuracy`; accuracy at 10 significant digits.
void write_eval_report(std::span<const EvalReportRow> rows, const std::filesystem::path& path);
std::vector<EvalReportRow> read_eval_report(const std::filesystem::path& path);

void write_confusion_csv(const EvalResult& result, const PhonemeInventory& inventory,
                         const std::filesystem::path& path);

}  // namespace attnprobe
