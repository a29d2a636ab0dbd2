#include "attnprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {
namespace {

void mix_with_uniform(Matrix& m, double noise) {
  if (noise == 0.0) return;
  const double floor = noise / static_cast<double>(m.cols());
  for (double& v : m.values()) v = (1.0 - noise) * v + floor;
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& v : row) v /= total;
  }
}

std::string utterance_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt%05zu", i);
  return buf;
}

}  // namespace

void PatternSpec::validate() const {
  if (!(noise_level >= 0.0 && noise_level < 1.0)) fail(ErrorCode::BadSpec, "noise_level outside [0, 1)");
  switch (kind) {
    case Category::Diagonal:
      if (!(bandwidth >= 1e-3)) fail(ErrorCode::BadSpec, "bandwidth must be positive");
      break;
    case Category::Vertical:
      if (!(target_column_fraction >= 0.0 && target_column_fraction <= 1.0)) {
        fail(ErrorCode::BadSpec, "target_column_fraction outside [0, 1]");
      }
      break;
    case Category::Global:
      if (!(concentration > 0.0)) fail(ErrorCode::BadSpec, "concentration must be positive");
      break;
  }
}

Matrix synth_attention(const PatternSpec& spec, std::size_t frames) {
  spec.validate();
  if (frames == 0) fail(ErrorCode::BadSpec, "T must be >= 1");
  Matrix m(frames, frames);
  switch (spec.kind) {
    case Category::Diagonal: {
      const double inv_two_var = 1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
      for (std::size_t q = 0; q < frames; ++q) {
        for (std::size_t k = 0; k < frames; ++k) {
          const double d = static_cast<double>(q) - static_cast<double>(k);
          m(q, k) = std::exp(-d * d * inv_two_var);
        }
      }
      normalize_rows(m);
      mix_with_uniform(m, spec.noise_level);
      break;
    }
    case Category::Vertical: {
      const auto target = std::min<std::size_t>(
          frames - 1, static_cast<std::size_t>(std::floor(spec.target_column_fraction *
                                                          static_cast<double>(frames))));
      const double spread =
          frames > 1 ? spec.noise_level / static_cast<double>(frames - 1) : 0.0;
      for (std::size_t q = 0; q < frames; ++q) {
        for (std::size_t k = 0; k < frames; ++k) m(q, k) = spread;
        m(q, target) = frames > 1 ? 1.0 - spec.noise_level : 1.0;
      }
      break;
    }
    case Category::Global: {
      Rng rng(spec.seed);
      std::gamma_distribution<double> gamma(spec.concentration, 1.0);
      for (std::size_t q = 0; q < frames; ++q) {
        auto row = m.row(q);
        double total = 0.0;
        while (total <= 0.0) {
          total = 0.0;
          for (double& v : row) total += (v = gamma(rng));
        }
        for (double& v : row) v /= total;
      }
      mix_with_uniform(m, spec.noise_level);
      break;
    }
  }
  return m;
}

std::vector<BatteryItem> generate_battery(std::size_t frames, std::size_t per_category,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<BatteryItem> battery;
  battery.reserve(3 * per_category);
  for (Category kind : kAllCategories) {
    for (std::size_t i = 0; i < per_category; ++i) {
      PatternSpec spec;
      spec.kind = kind;
      switch (kind) {
        case Category::Diagonal: spec.bandwidth = between(0.5, 2.0); break;
        case Category::Vertical:
          spec.target_column_fraction = between(0.2, 0.8);
          spec.noise_level = between(0.0, 0.15);
          break;
        case Category::Global: spec.concentration = between(1.0, 4.0); break;
      }
      spec.seed = rng();
      battery.push_back({spec, synth_attention(spec, frames), kind});
    }
  }
  return battery;
}

AttentionOverride BatteryPlan::overrides_for(std::size_t frames,
                                             std::uint64_t utterance_key) const {
  AttentionOverride out;
  for (const auto& a : assignments) {
    PatternSpec spec = a.spec;
    spec.seed = derive_seed(spec.seed, utterance_key);
    out.matrices.emplace(a.head, synth_attention(spec, frames));
  }
  return out;
}

Category BatteryPlan::category_of(const HeadId& head) const {
  for (const auto& a : assignments)
    if (a.head == head) return a.spec.kind;
  fail(ErrorCode::InvalidArgument, "head " + to_string(head) + " carries no battery pattern");
}

BatteryPlan plan_battery_injection(std::size_t layers, std::size_t heads, std::size_t per_category,
                                   std::uint64_t seed) {
  if (3 * per_category > layers * heads) {
    fail(ErrorCode::BadSpec, std::to_string(3 * per_category) + " patterns do not fit " +
                                 std::to_string(layers) + "x" + std::to_string(heads) + " heads");
  }
  const auto battery = generate_battery(1, per_category, seed);
  std::vector<HeadId> slots;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) slots.push_back({l, h});
  Rng rng(derive_seed(seed, 0x5105));
  std::shuffle(slots.begin(), slots.end(), rng);

  BatteryPlan plan;
  for (std::size_t i = 0; i < battery.size(); ++i) plan.assignments.push_back({slots[i], battery[i].spec});
  std::ranges::sort(plan.assignments, {}, &BatteryPlan::Assignment::head);
  return plan;
}

void SynthDatasetConfig::validate() const {
  if (num_classes < 2) fail(ErrorCode::BadConfig, "need at least 2 classes");
  if (num_utterances == 0) fail(ErrorCode::BadConfig, "need at least 1 utterance");
  if (min_frames == 0 || min_frames > max_frames) fail(ErrorCode::BadConfig, "bad frame range");
  if (feature_dim == 0) fail(ErrorCode::BadConfig, "feature_dim must be >= 1");
  if (!(prototype_noise >= 0.0)) fail(ErrorCode::BadConfig, "prototype_noise must be >= 0");
  if (!(mean_segment_frames >= 1.0)) fail(ErrorCode::BadConfig, "mean segment length must be >= 1");
  if (mode == DependencyMode::Harmony) {
    if (trigger_classes.empty() || dependent_classes.empty()) {
      fail(ErrorCode::BadConfig, "harmony mode needs trigger and dependent classes");
    }
    std::set<std::uint32_t> triggers(trigger_classes.begin(), trigger_classes.end());
    std::set<std::uint32_t> dependents(dependent_classes.begin(), dependent_classes.end());
    if (triggers.size() != trigger_classes.size() || dependents.size() != dependent_classes.size()) {
      fail(ErrorCode::BadConfig, "repeated class in trigger or dependent list");
    }
    for (auto c : trigger_classes) {
      if (c >= num_classes) fail(ErrorCode::BadConfig, "trigger class out of range");
      if (dependents.contains(c)) fail(ErrorCode::BadConfig, "trigger and dependent classes overlap");
    }
    for (auto c : dependent_classes)
      if (c >= num_classes) fail(ErrorCode::BadConfig, "dependent class out of range");
  }
}

PhonemeInventory synthetic_inventory(std::size_t classes) {
  if (classes < 2) fail(ErrorCode::BadConfig, "need at least 2 classes");
  std::vector<std::string> symbols{PhonemeInventory::kSilence, PhonemeInventory::kUnknown};
  for (std::size_t i = 2; i < classes; ++i) symbols.push_back("ph" + std::to_string(i));
  return PhonemeInventory(std::move(symbols));
}

SynthDataset generate_dataset(const SynthDatasetConfig& config) {
  config.validate();
  SynthDataset ds{synthetic_inventory(config.num_classes),
                  Matrix(config.num_classes, config.feature_dim), {}};
  {
    Rng rng(derive_seed(config.seed, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : ds.prototypes.values()) v = normal(rng);
  }

  const bool harmony = config.mode == DependencyMode::Harmony;
  std::vector<std::uint32_t> free_classes;
  for (std::uint32_t c = 0; c < config.num_classes; ++c) free_classes.push_back(c);

  ds.utterances.resize(config.num_utterances);
  for (std::size_t u = 0; u < config.num_utterances; ++u) {
    Rng rng(derive_seed(config.seed, u + 1));
    std::uniform_int_distribution<std::size_t> length(config.min_frames, config.max_frames);
    std::geometric_distribution<std::size_t> extra(1.0 / config.mean_segment_frames);
    std::uniform_int_distribution<std::size_t> pick_class(0, config.num_classes - 1);
    std::uniform_int_distribution<std::size_t> pick_trigger(
        0, harmony ? config.trigger_classes.size() - 1 : 0);
    std::normal_distribution<double> noise(0.0, config.prototype_noise);

    const std::size_t frames = length(rng);
    Utterance& utt = ds.utterances[u];
    utt.features = {utterance_name(u), Matrix(frames, config.feature_dim)};
    utt.labels = {utterance_name(u), std::vector<std::uint32_t>(frames)};

    std::size_t trigger_rank = 0;
    for (std::size_t t = 0, segment = 0; t < frames; ++segment) {
      std::uint32_t sounded = 0;
      std::uint32_t label = 0;
      if (harmony && segment == 0) {
        trigger_rank = pick_trigger(rng);
        sounded = label = config.trigger_classes[trigger_rank];
      } else {
        sounded = label = static_cast<std::uint32_t>(pick_class(rng));
      }
      if (harmony) {
        const auto trig = std::ranges::find(config.trigger_classes, label);
        if (trig != config.trigger_classes.end()) {
          trigger_rank = static_cast<std::size_t>(trig - config.trigger_classes.begin());
        } else if (std::ranges::find(config.dependent_classes, label) !=
                   config.dependent_classes.end()) {
          sounded = config.dependent_classes.front();
          label = config.dependent_classes[trigger_rank % config.dependent_classes.size()];
        }
      }
      const std::size_t duration = std::min(frames - t, 1 + extra(rng));
      for (std::size_t i = 0; i < duration; ++i, ++t) {
        utt.labels.labels[t] = label;
        auto row = utt.features.values.row(t);
        const auto proto = ds.prototypes.row(sounded);
        for (std::size_t f = 0; f < row.size(); ++f) row[f] = proto[f] + noise(rng);
      }
    }
  }
  return ds;
}

DatasetManifest write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.inventory = "inventory.txt";
  manifest.base_dir = dir;
  write_inventory(dataset.inventory, dir / manifest.inventory);
  for (const auto& u : dataset.utterances) {
    const std::string id = u.features.utterance_id;
    ManifestEntry e{id, id + ".fea", id + ".lab", std::nullopt};
    write_features(u.features, dir / e.features);
    write_labels(u.labels, dir / e.labels);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest, dir / "manifest.txt");
  return manifest;
}

}  // namespace attnprobe
