#include "attnprobe/ablation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {

std::vector<HeadId> rank_heads(std::span<const HeadScores> scores,
                               std::span<const HeadCategory> categories, Category category) {
  if (scores.size() != categories.size()) {
    fail(ErrorCode::LengthMismatch, "scores and categories differ in length");
  }
  std::vector<const HeadScores*> members;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(scores[i].head == categories[i].head)) {
      fail(ErrorCode::InvalidArgument, "scores and categories list heads in different orders");
    }
    if (categories[i].category == category) members.push_back(&scores[i]);
  }
  std::ranges::sort(members, [&](const HeadScores* a, const HeadScores* b) {
    const double sa = a->score(category);
    const double sb = b->score(category);
    if (sa != sb) return sa > sb;
    return a->head < b->head;
  });
  std::vector<HeadId> out;
  for (const auto* m : members) out.push_back(m->head);
  return out;
}

AblationCurve ablate_cumulative(const RepresentationSource& source, const ProbeModel& probe,
                                std::span<const Utterance> test, std::size_t num_classes,
                                std::span<const HeadId> ranked_heads, Category category,
                                const AblationOptions& options) {
  if (source.encoder == nullptr) fail(ErrorCode::InvalidArgument, "ablation needs an encoder");
  if (options.retrain && options.train_utterances == nullptr) {
    fail(ErrorCode::InvalidArgument, "retraining needs training utterances");
  }
  const ModelConfig& config = source.encoder->config();

  // Mask sets: steps 0..N, then the all-masked baseline.
  std::vector<HeadMask> masks(ranked_heads.size() + 2);
  for (std::size_t i = 1; i <= ranked_heads.size(); ++i) {
    masks[i] = masks[i - 1];
    masks[i].masked.insert(ranked_heads[i - 1]);
  }
  masks.back() = HeadMask::all(config.num_layers, config.num_heads);

  std::vector<double> accuracy(masks.size());
  const std::size_t outer_jobs = std::min(options.jobs, masks.size());
  const std::size_t inner_jobs = outer_jobs > 1 ? 1 : options.jobs;
  parallel_for(masks.size(), outer_jobs, [&](std::size_t i) {
    RepresentationSource masked = source;
    masked.mask = masks[i];
    ProbeModel model = probe;
    if (options.retrain && i > 0) {
      model = train_probe(collect_frames(*options.train_utterances, num_classes, masked, inner_jobs),
                          options.probe_config);
    }
    accuracy[i] = eval_probe(model, collect_frames(test, num_classes, masked, inner_jobs)).accuracy;
  });

  AblationCurve curve;
  curve.category = category;
  curve.ranked_heads.assign(ranked_heads.begin(), ranked_heads.end());
  curve.baseline_all_masked = accuracy.back();
  accuracy.pop_back();
  curve.accuracy_at_step = std::move(accuracy);
  return curve;
}

AblationCurve ablate_cumulative(const RepresentationSource& source, const ProbeModel& probe,
                                const DatasetManifest& test_manifest,
                                std::span<const HeadId> ranked_heads, Category category,
                                const AblationOptions& options) {
  const PhonemeInventory inventory = load_inventory(test_manifest);
  std::vector<Utterance> test(test_manifest.size());
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = load_utterance(test_manifest, i);
  return ablate_cumulative(source, probe, test, inventory.size(), ranked_heads, category, options);
}

void emit_curves(std::span<const AblationCurve> curves, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "category,step,masked_head,accuracy\n";
  for (const auto& c : curves) {
    const std::string name(to_string(c.category));
    if (!c.ranked_heads.empty()) {
      for (std::size_t i = 0; i < c.accuracy_at_step.size(); ++i) {
        out << name << ',' << i << ',' << (i == 0 ? std::string("none") : to_string(c.ranked_heads[i - 1]))
            << ',' << format_real(c.accuracy_at_step[i]) << '\n';
      }
    }
    out << name << ",baseline,all," << format_real(c.baseline_all_masked) << '\n';
  }
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  file << out.str();
  if (!file) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

void emit_curve(const AblationCurve& curve, const std::filesystem::path& path) {
  emit_curves(std::span<const AblationCurve>(&curve, 1), path);
}

std::vector<AblationCurve> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open curve " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "category,step,masked_head,accuracy") {
    fail(ErrorCode::ParseError, path.string() + ":1: not an ablation curve header");
  }
  std::vector<AblationCurve> curves;
  bool open = false;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 4) fail(ErrorCode::ParseError, where + ": expected 4 fields");
    const Category category = parse_category(f[0]);
    if (!open) {
      curves.push_back({category, {}, {}, 0.0});
      open = true;
    }
    AblationCurve& c = curves.back();
    if (c.category != category) fail(ErrorCode::ParseError, where + ": curve missing its baseline row");
    double accuracy = 0.0;
    try {
      accuracy = std::stod(f[3]);
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, where + ": bad accuracy");
    }
    if (f[1] == "baseline") {
      c.baseline_all_masked = accuracy;
      open = false;
      continue;
    }
    if (f[1] != std::to_string(c.accuracy_at_step.size())) {
      fail(ErrorCode::ParseError, where + ": steps out of order");
    }
    if (c.accuracy_at_step.empty()) {
      if (f[2] != "none") fail(ErrorCode::ParseError, where + ": step 0 must mask 'none'");
    } else {
      const HeadMask one = HeadMask::parse(f[2]);
      if (one.masked.size() != 1) fail(ErrorCode::ParseError, where + ": expected one layer:head");
      c.ranked_heads.push_back(*one.masked.begin());
    }
    c.accuracy_at_step.push_back(accuracy);
  }
  if (open) fail(ErrorCode::ParseError, path.string() + ": last curve has no baseline row");
  return curves;
}

double BatteryAblationResult::fully_masked(Category c) const {
  const auto& steps = curve(c).accuracy_at_step;
  return steps.empty() ? unmasked_accuracy : steps.back();
}

BatteryAblationResult run_battery_ablation(const BatteryAblationConfig& config) {
  SynthDatasetConfig data = config.data;
  data.seed = derive_seed(config.seed, 1);
  data.feature_dim = config.model.feature_dim;
  const SynthDataset dataset = generate_dataset(data);
  const std::size_t classes = dataset.inventory.size();

  const ModelWeights weights = init_weights(config.model, derive_seed(config.seed, 2));
  const Encoder encoder(weights);
  const BatteryPlan plan = plan_battery_injection(config.model.num_layers, config.model.num_heads,
                                                  config.per_category, derive_seed(config.seed, 3));
  RepresentationSource source{&encoder, {}, &plan};

  // Utterance-level split.
  const std::size_t n = dataset.utterances.size();
  if (n < 2) fail(ErrorCode::TooFewUtterances, "experiment needs at least 2 utterances");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(config.seed, 4));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.split_ratio * static_cast<double>(n))), 1, n - 1);
  std::vector<Utterance> train, test;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : test).push_back(dataset.utterances[order[i]]);
  }

  BatteryAblationResult result;
  {
    const auto sample = sample_utterances(n, std::min(config.score_sample, n), derive_seed(config.seed, 5));
    std::vector<AttentionDump> dumps(sample.size());
    parallel_for(sample.size(), config.jobs, [&](std::size_t i) {
      dumps[i] = source.run(dataset.utterances[sample[i]].features).attention;
    });
    result.scores = score_dumps(dumps, config.jobs);
  }
  result.categories = categorize(result.scores);
  for (const auto& a : plan.assignments) {
    ++result.injected_heads;
    const auto it = std::ranges::find(result.categories, a.head, &HeadCategory::head);
    if (it != result.categories.end() && it->category == a.spec.kind) ++result.recovered_heads;
  }

  ProbeConfig probe_config = config.probe;
  probe_config.seed = derive_seed(config.seed, 6);
  const ProbeModel probe = train_probe(collect_frames(train, classes, source, config.jobs), probe_config);

  AblationOptions options;
  options.jobs = config.jobs;
  options.retrain = config.retrain;
  options.train_utterances = &train;
  options.probe_config = probe_config;
  for (Category c : kAllCategories) {
    const auto ranked = rank_heads(result.scores, result.categories, c);
    result.curves[static_cast<std::size_t>(c)] =
        ablate_cumulative(source, probe, test, classes, ranked, c, options);
  }
  result.unmasked_accuracy = result.curves[0].accuracy_at_step.front();
  result.baseline_all_masked = result.curves[0].baseline_all_masked;
  return result;
}

}  // namespace attnprobe
