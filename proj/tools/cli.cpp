#include "cli.hpp"

#include <attnprobe/ablation.hpp>
#include <attnprobe/alignment.hpp>
#include <attnprobe/error.hpp>
#include <attnprobe/head_metrics.hpp>
#include <attnprobe/manifest.hpp>
#include <attnprobe/minimodel.hpp>
#include <attnprobe/prm.hpp>
#include <attnprobe/probe.hpp>
#include <attnprobe/support.hpp>
#include <attnprobe/synth.hpp>
#include <attnprobe/tensor_io.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

#include "run_record.hpp"

namespace attnprobe::cli {
namespace {

namespace fs = std::filesystem;

struct ModelOptions {
  std::string config;
  std::string weights;
  std::string mask;
  std::size_t inject_battery = 0;
  std::uint64_t battery_seed = 0;
};

struct ProbeOptions {
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t steps = 50'000;
  double l2 = 0.0;
};

/// Encoder state behind a RepresentationSource. Raw features when no weights
/// were given.
struct ModelContext {
  std::unique_ptr<Encoder> encoder;
  std::unique_ptr<BatteryPlan> plan;

  RepresentationSource source(HeadMask mask = {}) const {
    return RepresentationSource{encoder.get(), std::move(mask), plan.get()};
  }
};

void add_model_options(CLI::App* sub, ModelOptions& m, bool with_mask) {
  sub->add_option("--config", m.config, "Model config file (key=value lines)");
  sub->add_option("--weights", m.weights,
                  "Encoder weights (WGT1); without it the probe sees raw features");
  if (with_mask) sub->add_option("--mask", m.mask, "Heads to mask, as l:h,l:h,...");
  sub->add_option("--inject-battery", m.inject_battery,
                  "Override heads with a synthetic battery of N patterns per category (0 = off)");
  sub->add_option("--battery-seed", m.battery_seed, "Seed of the injected battery");
}

void add_probe_options(CLI::App* sub, ProbeOptions& p) {
  sub->add_option("--lr", p.learning_rate, "Probe learning rate");
  sub->add_option("--batch", p.batch_size, "Frames per gradient step");
  sub->add_option("--steps", p.steps, "Gradient steps");
  sub->add_option("--l2", p.l2, "L2 penalty on probe weights");
}

ProbeConfig probe_config(const ProbeOptions& p, std::uint64_t seed) {
  ProbeConfig c;
  c.learning_rate = p.learning_rate;
  c.batch_size = p.batch_size;
  c.num_steps = p.steps;
  c.l2_penalty = p.l2;
  c.seed = seed;
  c.validate();
  return c;
}

ModelContext load_model(const ModelOptions& m, RunRecord& record) {
  ModelContext ctx;
  if (m.weights.empty()) {
    if (m.inject_battery > 0 || !m.mask.empty()) {
      fail(ErrorCode::MissingFlag, "--mask and --inject-battery need --weights");
    }
    return ctx;
  }
  if (m.config.empty()) fail(ErrorCode::MissingFlag, "--weights needs --config");
  record.input(m.config);
  record.input(m.weights);
  const ModelConfig config = read_model_config(m.config);
  ctx.encoder = std::make_unique<Encoder>(load_weights(m.weights, config));
  if (m.inject_battery > 0) {
    ctx.plan = std::make_unique<BatteryPlan>(
        plan_battery_injection(config.num_layers, config.num_heads, m.inject_battery, m.battery_seed));
    record.seed("battery", m.battery_seed);
  }
  return ctx;
}

HeadMask parse_mask(const std::string& text, const ModelContext& ctx) {
  HeadMask mask = HeadMask::parse(text);
  if (ctx.encoder) mask.validate(ctx.encoder->config().num_layers, ctx.encoder->config().num_heads);
  return mask;
}

fs::path run_record_path(const fs::path& output) {
  return output.parent_path() / (output.filename().string() + ".run.json");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create " + path.parent_path().string());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

/// Every option of `sub` with its resolved value, for the run record.
void record_flags(const CLI::App* sub, RunRecord& record) {
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const std::string name = opt->get_lnames().front();
    if (opt->get_expected_max() == 0) {
      record.config(name, opt->count() > 0);
    } else if (opt->count() > 0) {
      std::string joined;
      for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
      record.config(name, joined);
    } else {
      record.config(name, opt->get_default_str());
    }
  }
}

std::vector<HeadCategory> categories_for(const ScoreTable& table) {
  const bool complete = !table.categories.empty() &&
                        std::ranges::all_of(table.categories, [](const auto& c) { return c.has_value(); });
  if (!complete) return categorize(table.scores);
  std::vector<HeadCategory> out;
  for (std::size_t i = 0; i < table.scores.size(); ++i) {
    out.push_back({table.scores[i].head, *table.categories[i], {}});
  }
  return out;
}

// Ground truth of a synthetic battery: which pattern sits in which head.
void write_truth_csv(const std::vector<std::pair<HeadId, PatternSpec>>& rows, const fs::path& path) {
  std::ostringstream out;
  out << "layer,head,category,bandwidth,target_column_fraction,concentration,noise_level,seed\n";
  for (const auto& [head, spec] : rows) {
    out << head.layer << ',' << head.head << ',' << to_string(spec.kind) << ','
        << format_real(spec.bandwidth) << ',' << format_real(spec.target_column_fraction) << ','
        << format_real(spec.concentration) << ',' << format_real(spec.noise_level) << ','
        << spec.seed << '\n';
  }
  write_text(path, out.str());
}

std::vector<std::pair<HeadId, Category>> read_truth_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<HeadId, Category>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string layer, head, category;
    if (!std::getline(fields, layer, ',') || !std::getline(fields, head, ',') ||
        !std::getline(fields, category, ',')) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": short row");
    }
    try {
      rows.push_back({{std::stoul(layer), std::stoul(head)}, parse_category(category)});
    } catch (const std::logic_error&) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad head id");
    }
  }
  return rows;
}

/// Option values of all subcommands plus the handler of each.
struct Cli {
  CLI::App app{"Attention head analysis toolkit", "attnprobe"};
  std::map<std::string, std::function<void()>> handlers;
  std::ostream* out = &std::cout;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  // score
  std::string manifest, out_path, out_dir;
  std::size_t sample = 10;
  // categorize
  std::string scores, attention, truth, counts;
  // prm
  std::size_t layer = 0, max_utterances = 0;
  std::vector<std::size_t> heads;
  bool transpose = false;
  std::string mask_out, pgm;
  // synth-battery
  std::size_t frames = 50, per_category = 12;
  // synth-data
  SynthDatasetConfig data;
  std::string mode = "local";
  // forward / probes
  ModelOptions model;
  ProbeOptions probe;
  std::string weights_out, probe_path, split_dir, train_manifest, confusion;
  std::string pretrain = "-", finetune = "-";
  double split = 0.0;
  // ablate
  std::string category = "all";
  bool retrain = false;
  // report
  std::string grid;
  // align
  std::string alignment, inventory, utterance_id;
  double duration = 0.0, shift_ms = 10.0, window_ms = 25.0;

  Cli();
  CLI::App* add(const std::string& name, const std::string& about, std::function<void()> fn) {
    CLI::App* sub = app.add_subcommand(name, about);
    handlers[name] = std::move(fn);
    return sub;
  }
  void add_seed(CLI::App* sub) { sub->add_option("--seed", seed, "Seed for every random choice"); }
  void add_jobs(CLI::App* sub) {
    sub->add_option("--jobs", jobs, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
  }

  void score(const CLI::App* sub);
  void categorize_cmd(const CLI::App* sub);
  void prm(const CLI::App* sub);
  void synth_battery(const CLI::App* sub);
  void synth_data(const CLI::App* sub);
  void forward_cmd(const CLI::App* sub);
  void probe_train(const CLI::App* sub);
  void probe_eval(const CLI::App* sub);
  void ablate(const CLI::App* sub);
  void report(const CLI::App* sub);
  void align(const CLI::App* sub);
};

Cli::Cli() {
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  app.fallthrough(false);

  CLI::App* s = nullptr;

  s = add("score", "Score every head's globalness, verticality and diagonalness", {});
  s->add_option("--manifest", manifest, "Dataset manifest with attention files")->required();
  s->add_option("--sample", sample, "Utterances to average over");
  add_seed(s);
  add_jobs(s);
  s->add_option("--out", out_path, "Scores CSV")->required();
  handlers["score"] = [this, s] { score(s); };

  s = add("categorize", "Assign each head the category of its largest z-scored metric", {});
  auto* scores_opt = s->add_option("--scores", scores, "Scores CSV from `score`");
  auto* att_opt = s->add_option("--attention", attention, "Score the heads of one ATT1 dump instead");
  scores_opt->excludes(att_opt);
  s->add_option("--truth", truth, "Battery truth CSV; prints recovered N/M");
  s->add_option("--counts", counts, "Category counts CSV");
  add_jobs(s);
  s->add_option("--out", out_path, "Scores CSV with a category column")->required();
  handlers["categorize"] = [this, s] { categorize_cmd(s); };

  s = add("prm", "Phoneme relation map: mean attention between phoneme pairs", {});
  s->add_option("--manifest", manifest, "Dataset manifest with attention files")->required();
  s->add_option("--layer", layer, "Layer to pool")->default_str("last");
  s->add_option("--heads", heads, "Heads to pool, comma separated")->delimiter(',')->default_str("all");
  s->add_option("--max-utterances", max_utterances, "Use the first N utterances (0 = all)");
  s->add_flag("--transpose", transpose, "Write rows as key phoneme instead of query phoneme");
  s->add_option("--mask-out", mask_out, "CSV marking populated cells with 1");
  s->add_option("--pgm", pgm, "Also write an 8-bit PGM image of the map");
  add_jobs(s);
  s->add_option("--out", out_path, "Map CSV")->required();
  handlers["prm"] = [this, s] { prm(s); };

  s = add("synth-battery", "Write a one-layer dump of synthetic global, vertical and diagonal heads", {});
  s->add_option("--frames", frames, "Frames per pattern");
  s->add_option("--per-category", per_category, "Patterns of each kind");
  add_seed(s);
  s->add_option("--out", out_path, "ATT1 output")->required();
  s->add_option("--truth", truth, "Truth CSV naming each head's pattern")->required();
  handlers["synth-battery"] = [this, s] { synth_battery(s); };

  s = add("synth-data", "Generate a labelled synthetic feature dataset", {});
  s->add_option("--utterances", data.num_utterances, "Number of utterances");
  s->add_option("--min-frames", data.min_frames, "Shortest utterance");
  s->add_option("--max-frames", data.max_frames, "Longest utterance");
  s->add_option("--classes", data.num_classes, "Inventory size including sil and unk");
  s->add_option("--feature-dim", data.feature_dim, "Feature dimension");
  s->add_option("--noise", data.prototype_noise, "Stddev of per-frame noise around the prototype");
  s->add_option("--segment-frames", data.mean_segment_frames, "Mean segment length in frames");
  s->add_option("--mode", mode, "local or harmony")->check(CLI::IsMember({"local", "harmony"}));
  s->add_option("--triggers", data.trigger_classes, "Harmony trigger class ids")->delimiter(',');
  s->add_option("--dependents", data.dependent_classes, "Harmony dependent class ids")->delimiter(',');
  add_seed(s);
  s->add_option("--out-dir", out_dir, "Output directory")->required();
  handlers["synth-data"] = [this, s] { synth_data(s); };

  s = add("forward", "Run the encoder over a manifest, writing attention dumps and representations", {});
  s->add_option("--manifest", manifest, "Dataset manifest")->required();
  add_model_options(s, model, true);
  s->add_option("--save-weights", weights_out, "Save the (possibly freshly initialised) weights");
  add_seed(s);
  add_jobs(s);
  s->add_option("--out-dir", out_dir, "Output directory")->required();
  handlers["forward"] = [this, s] { forward_cmd(s); };

  s = add("probe-train", "Train a frame-level linear probe", {});
  s->add_option("--manifest", manifest, "Training manifest (or the full set with --split)")->required();
  s->add_option("--split", split, "Train on this fraction of utterances; 0 = use all");
  s->add_option("--split-dir", split_dir, "Where --split writes train.txt and test.txt");
  add_model_options(s, model, true);
  add_probe_options(s, probe);
  add_seed(s);
  add_jobs(s);
  s->add_option("--out", out_path, "Probe weights (WGT1)")->required();
  handlers["probe-train"] = [this, s] { probe_train(s); };

  s = add("probe-eval", "Evaluate a probe, writing a one-row accuracy report", {});
  s->add_option("--manifest", manifest, "Test manifest")->required();
  s->add_option("--probe", probe_path, "Probe weights")->required();
  add_model_options(s, model, true);
  s->add_option("--pretrain", pretrain, "Report label for the pretraining data");
  s->add_option("--finetune", finetune, "Report label for the probe's training data");
  s->add_option("--confusion", confusion, "Confusion matrix CSV");
  add_jobs(s);
  s->add_option("--out", out_path, "Report CSV")->required();
  handlers["probe-eval"] = [this, s] { probe_eval(s); };

  s = add("ablate", "Cumulatively mask the top heads of a category and track probe accuracy", {});
  s->add_option("--manifest", manifest, "Test manifest")->required();
  s->add_option("--probe", probe_path, "Probe trained on unmasked representations")->required();
  s->add_option("--scores", scores, "Scores CSV of this model's heads")->required();
  s->add_option("--category", category, "global, vertical, diagonal or all")
      ->check(CLI::IsMember({"global", "vertical", "diagonal", "all"}, CLI::ignore_case));
  add_model_options(s, model, false);
  s->add_flag("--retrain", retrain, "Retrain the probe under every mask");
  s->add_option("--train-manifest", train_manifest, "Training data for --retrain");
  add_probe_options(s, probe);
  add_seed(s);
  add_jobs(s);
  s->add_option("--out", out_path, "Curve CSV")->required();
  handlers["ablate"] = [this, s] { ablate(s); };

  s = add("report", "Per-category score summaries and head counts", {});
  s->add_option("--scores", scores, "Scores CSV, with or without categories")->required();
  s->add_option("--counts", counts, "Category counts CSV");
  s->add_option("--grid", grid, "Per-layer head grid of every metric");
  s->add_option("--out", out_path, "Summary CSV")->required();
  handlers["report"] = [this, s] { report(s); };

  s = add("align", "Convert a time alignment into frame labels", {});
  s->add_option("--alignment", alignment, "Lines of 'start end phone' in seconds")->required();
  s->add_option("--duration", duration, "Utterance duration in seconds")->required();
  s->add_option("--inventory", inventory, "Phoneme inventory")->required();
  s->add_option("--id", utterance_id, "Utterance id (default: alignment file stem)");
  s->add_option("--frame-shift-ms", shift_ms, "Frame shift in milliseconds");
  s->add_option("--window-ms", window_ms, "Analysis window in milliseconds");
  s->add_option("--out", out_path, "Labels file")->required();
  handlers["align"] = [this, s] { align(s); };
}

void Cli::score(const CLI::App* sub) {
  RunRecord record("score");
  record_flags(sub, record);
  record.seed("seed", seed);
  record.input(manifest);
  const DatasetManifest m = read_manifest(manifest);
  const auto result = score_all(m, sample, seed, jobs);
  ensure_parent(out_path);
  write_scores_csv(result, {}, out_path);
  record.output(out_path);
  record.write(run_record_path(out_path));
  *out << "scored " << result.size() << " heads over " << sample << " utterances\n";
}

void Cli::categorize_cmd(const CLI::App* sub) {
  RunRecord record("categorize");
  record_flags(sub, record);
  std::vector<HeadScores> head_scores;
  if (!scores.empty()) {
    record.input(scores);
    head_scores = read_scores_csv(scores).scores;
  } else if (!attention.empty()) {
    record.input(attention);
    const std::vector<AttentionDump> dumps{read_attention_dump(attention)};
    head_scores = score_dumps(dumps, jobs);
  } else {
    fail(ErrorCode::MissingFlag, "categorize needs --scores or --attention");
  }
  const auto cats = categorize(head_scores);
  ensure_parent(out_path);
  write_scores_csv(head_scores, cats, out_path);
  record.output(out_path);

  const CategoryCounts c = category_counts(cats);
  if (!counts.empty()) {
    std::ostringstream csv;
    csv << "category,count\n";
    for (Category k : kAllCategories) csv << to_string(k) << ',' << c.of(k) << '\n';
    write_text(counts, csv.str());
    record.output(counts);
  }
  *out << "global " << c.global << " vertical " << c.vertical << " diagonal " << c.diagonal << '\n';

  if (!truth.empty()) {
    record.input(truth);
    std::size_t recovered = 0;
    const auto rows = read_truth_csv(truth);
    for (const auto& [head, kind] : rows) {
      const auto it = std::ranges::find(cats, head, &HeadCategory::head);
      if (it == cats.end()) fail(ErrorCode::InvalidArgument, "truth names unknown head " + to_string(head));
      recovered += it->category == kind;
    }
    *out << "recovered " << recovered << '/' << rows.size() << '\n';
  }
  record.write(run_record_path(out_path));
}

void Cli::prm(const CLI::App* sub) {
  RunRecord record("prm");
  record_flags(sub, record);
  record.input(manifest);
  PrmSelection selection;
  if (sub->count("--layer") > 0) selection.layer = layer;
  if (sub->count("--heads") > 0) selection.heads = heads;
  selection.max_utterances = max_utterances;
  const PRMatrix map = prm_aggregate(read_manifest(manifest), selection, jobs);

  PrmExportOptions options;
  options.transpose = transpose;
  if (!mask_out.empty()) options.mask_path = mask_out;
  if (!pgm.empty()) options.pgm_path = pgm;
  ensure_parent(out_path);
  export_prm(map, out_path, options);
  record.output(out_path);
  if (options.mask_path) record.output(*options.mask_path);
  if (options.pgm_path) record.output(*options.pgm_path);
  record.write(run_record_path(out_path));
  *out << "self-dominance " << format_real(map.self_dominance()) << '\n';
}

void Cli::synth_battery(const CLI::App* sub) {
  RunRecord record("synth-battery");
  record_flags(sub, record);
  record.seed("seed", seed);
  if (per_category == 0) fail(ErrorCode::BadSpec, "--per-category must be >= 1");
  const auto battery = generate_battery(frames, per_category, seed);
  // Shuffle the patterns over head slots so position says nothing about kind.
  std::vector<std::size_t> slot(battery.size());
  std::iota(slot.begin(), slot.end(), 0);
  Rng rng(derive_seed(seed, 7));
  std::shuffle(slot.begin(), slot.end(), rng);

  AttentionDump dump(fs::path(out_path).stem().string(), 1, battery.size(), frames);
  std::vector<std::pair<HeadId, PatternSpec>> rows(battery.size());
  for (std::size_t i = 0; i < battery.size(); ++i) {
    dump.set_head(0, slot[i], battery[i].attention);
    rows[slot[i]] = {HeadId{0, slot[i]}, battery[i].spec};
  }
  ensure_parent(out_path);
  write_attention_dump(dump, out_path);
  write_truth_csv(rows, truth);
  record.output(out_path);
  record.output(truth);
  record.write(run_record_path(out_path));
  *out << "wrote " << battery.size() << " heads, T=" << frames << '\n';
}

void Cli::synth_data(const CLI::App* sub) {
  RunRecord record("synth-data");
  record_flags(sub, record);
  record.seed("seed", seed);
  SynthDatasetConfig config = data;
  config.mode = mode == "harmony" ? DependencyMode::Harmony : DependencyMode::Local;
  config.seed = seed;
  const SynthDataset ds = generate_dataset(config);
  ensure_dir(out_dir);
  const DatasetManifest m = write_dataset(ds, out_dir);
  record.output(fs::path(out_dir) / "manifest.txt");
  record.write(fs::path(out_dir) / "run.json");
  *out << "wrote " << m.size() << " utterances\n";
}

void Cli::forward_cmd(const CLI::App* sub) {
  RunRecord record("forward");
  record_flags(sub, record);
  record.input(manifest);
  const DatasetManifest m = read_manifest(manifest);
  if (m.size() == 0) fail(ErrorCode::EmptyUtteranceSet, "manifest has no utterances");

  ModelContext ctx;
  ModelConfig config;
  if (!model.weights.empty()) {
    ctx = load_model(model, record);
    config = ctx.encoder->config();
  } else {
    if (!model.config.empty()) {
      record.input(model.config);
      config = read_model_config(model.config);
    } else {
      config.feature_dim = load_utterance(m, 0).features.feature_dim();
    }
    config.seed = seed;
    record.seed("seed", seed);
    const ModelWeights weights = init_weights(config, seed);
    if (!weights_out.empty()) {
      ensure_parent(weights_out);
      save_weights(weights, weights_out);
      record.output(weights_out);
    }
    ctx.encoder = std::make_unique<Encoder>(weights);
    if (model.inject_battery > 0) {
      ctx.plan = std::make_unique<BatteryPlan>(plan_battery_injection(
          config.num_layers, config.num_heads, model.inject_battery, model.battery_seed));
      record.seed("battery", model.battery_seed);
    }
  }
  const RepresentationSource source = ctx.source(parse_mask(model.mask, ctx));

  const fs::path dir(out_dir);
  ensure_dir(dir);
  write_model_config(config, dir / "model.cfg");
  record.output(dir / "model.cfg");

  DatasetManifest written;
  written.inventory = fs::proximate(fs::absolute(m.resolve(m.inventory)), fs::absolute(dir));
  written.entries.resize(m.size());
  parallel_for(m.size(), jobs, [&](std::size_t i) {
    const Utterance u = load_utterance(m, i);
    ForwardResult r = source.run(u.features);
    const std::string& id = m.entries[i].utterance_id;
    r.attention.set_utterance_id(id);
    write_attention_dump(r.attention, dir / (id + ".att"));
    write_features({id, std::move(r.representations)}, dir / (id + ".rep.fea"));
    written.entries[i] = {id, id + ".rep.fea",
                          fs::proximate(fs::absolute(m.resolve(m.entries[i].labels)), fs::absolute(dir)),
                          fs::path(id + ".att")};
  });
  write_manifest(written, dir / "manifest.txt");
  record.output(dir / "manifest.txt");
  record.write(dir / "run.json");
  *out << "encoded " << m.size() << " utterances (L=" << config.num_layers
       << ", H=" << config.num_heads << ", d=" << config.model_dim << ")\n";
}

void Cli::probe_train(const CLI::App* sub) {
  RunRecord record("probe-train");
  record_flags(sub, record);
  record.seed("seed", seed);
  record.input(manifest);
  DatasetManifest train = read_manifest(manifest);
  if (split != 0.0) {
    if (split_dir.empty()) fail(ErrorCode::MissingFlag, "--split needs --split-dir");
    auto [train_part, test_part] = split_dataset(train, split, derive_seed(seed, 1));
    const fs::path dir(split_dir);
    ensure_dir(dir);
    // Rebase entry paths onto the split directory.
    for (DatasetManifest* part : {&train_part, &test_part}) {
      part->inventory = fs::proximate(fs::absolute(train.resolve(train.inventory)), fs::absolute(dir));
      for (auto& e : part->entries) {
        e.features = fs::proximate(fs::absolute(train.resolve(e.features)), fs::absolute(dir));
        e.labels = fs::proximate(fs::absolute(train.resolve(e.labels)), fs::absolute(dir));
        if (e.attention) e.attention = fs::proximate(fs::absolute(train.resolve(*e.attention)), fs::absolute(dir));
      }
      part->base_dir = dir;
    }
    write_manifest(train_part, dir / "train.txt");
    write_manifest(test_part, dir / "test.txt");
    record.output(dir / "train.txt");
    record.output(dir / "test.txt");
    train = std::move(train_part);
  }
  const ModelContext ctx = load_model(model, record);
  const RepresentationSource source = ctx.source(parse_mask(model.mask, ctx));
  const FrameSet frames = collect_frames(train, source, jobs);
  const ProbeModel trained = train_probe(frames, probe_config(probe, derive_seed(seed, 2)));
  ensure_parent(out_path);
  save_probe(trained, out_path);
  record.output(out_path);
  record.write(run_record_path(out_path));
  *out << "trained on " << frames.size() << " frames; train accuracy "
       << format_real(eval_probe(trained, frames).accuracy) << '\n';
}

void Cli::probe_eval(const CLI::App* sub) {
  RunRecord record("probe-eval");
  record_flags(sub, record);
  record.input(manifest);
  record.input(probe_path);
  const ModelContext ctx = load_model(model, record);
  const HeadMask mask = parse_mask(model.mask, ctx);
  const ProbeModel trained = load_probe(probe_path);
  const DatasetManifest m = read_manifest(manifest);
  const EvalResult result = eval_probe(trained, m, ctx.source(mask), jobs);
  const std::vector<EvalReportRow> rows{{pretrain, finetune, mask.masked.size(), result.accuracy}};
  ensure_parent(out_path);
  write_eval_report(rows, out_path);
  record.output(out_path);
  if (!confusion.empty()) {
    ensure_parent(confusion);
    write_confusion_csv(result, load_inventory(m), confusion);
    record.output(confusion);
  }
  record.write(run_record_path(out_path));
  *out << "accuracy " << format_real(result.accuracy) << " (" << result.correct << '/' << result.total
       << ")\n";
}

void Cli::ablate(const CLI::App* sub) {
  RunRecord record("ablate");
  record_flags(sub, record);
  record.seed("seed", seed);
  record.input(manifest);
  record.input(probe_path);
  record.input(scores);
  if (model.weights.empty()) fail(ErrorCode::MissingFlag, "ablate needs --weights and --config");
  const ModelContext ctx = load_model(model, record);
  const ProbeModel trained = load_probe(probe_path);
  const ScoreTable table = read_scores_csv(scores);
  const auto cats = categories_for(table);

  AblationOptions options;
  options.jobs = jobs;
  options.retrain = retrain;
  options.probe_config = probe_config(probe, derive_seed(seed, 2));
  std::vector<Utterance> train_utts;
  if (retrain) {
    if (train_manifest.empty()) fail(ErrorCode::MissingFlag, "--retrain needs --train-manifest");
    record.input(train_manifest);
    const DatasetManifest tm = read_manifest(train_manifest);
    for (std::size_t i = 0; i < tm.size(); ++i) train_utts.push_back(load_utterance(tm, i));
    options.train_utterances = &train_utts;
  }

  const DatasetManifest test = read_manifest(manifest);
  std::vector<Category> wanted;
  if (CLI::detail::to_lower(category) == "all") {
    wanted.assign(kAllCategories.begin(), kAllCategories.end());
  } else {
    wanted.push_back(parse_category(category));
  }
  std::vector<AblationCurve> curves;
  for (Category c : wanted) {
    const auto ranked = rank_heads(table.scores, cats, c);
    curves.push_back(ablate_cumulative(ctx.source(), trained, test, ranked, c, options));
  }
  ensure_parent(out_path);
  emit_curves(curves, out_path);
  record.output(out_path);
  record.write(run_record_path(out_path));
  for (const auto& curve : curves) {
    *out << to_string(curve.category) << ": unmasked " << format_real(curve.accuracy_at_step.front())
         << ", all " << curve.ranked_heads.size() << " masked "
         << format_real(curve.accuracy_at_step.back()) << ", baseline "
         << format_real(curve.baseline_all_masked) << '\n';
  }
}

void Cli::report(const CLI::App* sub) {
  RunRecord record("report");
  record_flags(sub, record);
  record.input(scores);
  const ScoreTable table = read_scores_csv(scores);
  const auto cats = categories_for(table);
  const auto summary = summarize(table.scores, cats);

  std::ostringstream csv;
  csv << "category,heads_in_category,mean_all_heads,mean_within_category\n";
  for (const auto& s : summary) {
    csv << to_string(s.category) << ',' << s.heads_in_category << ',' << format_real(s.mean_all_heads)
        << ',' << format_real(s.mean_within_category) << '\n';
  }
  write_text(out_path, csv.str());
  record.output(out_path);

  if (!counts.empty()) {
    const CategoryCounts c = category_counts(cats);
    std::ostringstream text;
    text << "category,count\n";
    for (Category k : kAllCategories) text << to_string(k) << ',' << c.of(k) << '\n';
    write_text(counts, text.str());
    record.output(counts);
  }
  if (!grid.empty()) {
    std::size_t layers = 0, heads_per_layer = 0;
    for (const auto& s : table.scores) {
      layers = std::max(layers, s.head.layer + 1);
      heads_per_layer = std::max(heads_per_layer, s.head.head + 1);
    }
    std::ostringstream text;
    text << "metric,layer";
    for (std::size_t h = 0; h < heads_per_layer; ++h) text << ",h" << h;
    text << '\n';
    for (Category k : kAllCategories) {
      for (std::size_t l = 0; l < layers; ++l) {
        text << to_string(k) << ',' << l;
        for (std::size_t h = 0; h < heads_per_layer; ++h) {
          const auto it = std::ranges::find(table.scores, HeadId{l, h}, &HeadScores::head);
          text << ',' << (it == table.scores.end() ? std::string() : format_real(it->score(k)));
        }
        text << '\n';
      }
    }
    write_text(grid, text.str());
    record.output(grid);
  }
  record.write(run_record_path(out_path));
  for (const auto& s : summary) {
    *out << to_string(s.category) << ": " << s.heads_in_category << " heads, mean "
         << format_real(s.mean_all_heads) << " over all, " << format_real(s.mean_within_category)
         << " within\n";
  }
}

void Cli::align(const CLI::App* sub) {
  RunRecord record("align");
  record_flags(sub, record);
  record.input(alignment);
  record.input(inventory);
  FrameSpec spec;
  spec.frame_shift = std::chrono::microseconds(std::llround(shift_ms * 1000.0));
  spec.window = std::chrono::microseconds(std::llround(window_ms * 1000.0));
  const std::string id = utterance_id.empty() ? fs::path(alignment).stem().string() : utterance_id;
  const FrameLabels labels =
      frames_from_times(read_alignment(alignment), duration, spec, read_inventory(inventory), id);
  ensure_parent(out_path);
  write_labels(labels, out_path);
  record.output(out_path);
  record.write(run_record_path(out_path));
  *out << "labelled " << labels.size() << " frames\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli;
  cli.out = &out;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli.app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    const CLI::App* chosen = cli.app.get_subcommands().front();
    log_message(1, "running " + chosen->get_name());
    cli.handlers.at(chosen->get_name())();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (e.code() == ErrorCode::MissingFlag) {
      err << cli.app.get_subcommands().front()->help();
    }
    return e.is_io() ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "error [IoFailure]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

std::map<std::string, std::vector<std::string>> flag_table() {
  Cli cli;
  std::map<std::string, std::vector<std::string>> table;
  for (const CLI::App* sub : cli.app.get_subcommands({})) {
    auto& flags = table[sub->get_name()];
    for (const CLI::Option* opt : sub->get_options()) {
      for (const auto& name : opt->get_lnames()) flags.push_back("--" + name);
    }
  }
  return table;
}

}  // namespace attnprobe::cli
