// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// the number of failed criteria.

#include <attnprobe/ablation.hpp>
#include <attnprobe/head_metrics.hpp>
#include <attnprobe/manifest.hpp>
#include <attnprobe/minimodel.hpp>
#include <attnprobe/prm.hpp>
#include <attnprobe/probe.hpp>
#include <attnprobe/synth.hpp>
#include <attnprobe/tensor_io.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>

#include "oracles.hpp"
#include "test_support.hpp"
#ifdef ATTNPROBE_HAVE_CLI
#include "cli_pipeline.hpp"
#endif

using namespace attnprobe;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<Verdict()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = budget_s <= 0.0 || elapsed < budget_s;
  const bool pass = v.pass && in_time;
  failures += pass ? 0 : 1;
  char timing[96];
  if (budget_s > 0.0) {
    std::snprintf(timing, sizeof timing, "%.2f s, budget %.0f s%s", elapsed, budget_s,
                  in_time ? "" : " EXCEEDED");
  } else {
    std::snprintf(timing, sizeof timing, "%.2f s", elapsed);
  }
  std::printf("%s %-26s %s [%s]\n", pass ? "PASS" : "FAIL", name, v.detail.c_str(), timing);
  std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

Verdict metric_closed_forms() {
  using testing_support::one_hot_column;
  using testing_support::uniform;
  double worst = 0.0;
  const auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (std::size_t t : {1u, 2u, 4u, 10u, 50u}) {
    check(globalness(uniform(t)), std::log(static_cast<double>(t)));
    check(globalness(Matrix::identity(t)), 0.0);
    check(diagonalness(Matrix::identity(t)), 0.0);
    check(verticality(one_hot_column(t, 0)), 0.0);
  }
  check(diagonalness(uniform(4)), -0.3125);
  check(verticality(Matrix::identity(4)), -std::log(4.0));
  return {worst <= 1e-9, fmt("max |error| %.3g (tol 1e-9)", worst)};
}

Verdict oracle_equivalence() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> size(2, 16);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto grid = oracle::random_stochastic(size(rng), rng);
    const Matrix m = testing_support::to_matrix(grid);
    worst = std::max(worst, std::abs(globalness(m) - static_cast<double>(oracle::globalness(grid))));
    worst = std::max(worst, std::abs(diagonalness(m) - static_cast<double>(oracle::diagonalness(grid))));
    worst = std::max(worst, std::abs(verticality(m) - static_cast<double>(oracle::verticality(grid))));
  }
  return {worst <= 1e-9, fmt("100 matrices, T in 2..16, max |error| %.3g (tol 1e-9)", worst)};
}

std::size_t battery_recovered(std::uint64_t seed) {
  const auto battery = generate_battery(50, 12, seed);
  AttentionDump dump("battery", 1, battery.size(), 50);
  for (std::size_t i = 0; i < battery.size(); ++i) dump.set_head(0, i, battery[i].attention);
  const std::vector<AttentionDump> dumps{dump};
  const auto cats = categorize(score_dumps(dumps));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < battery.size(); ++i) ok += cats[i].category == battery[i].true_category;
  return ok;
}

Verdict categorization_battery() {
  const std::size_t first = battery_recovered(1);
  std::size_t perfect = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) perfect += battery_recovered(seed) == 36;
  return {first == 36 && perfect >= 19,
          fmt("seed 1: %.0f/36; perfect recoveries %.0f/20 (need 19)", static_cast<double>(first),
              static_cast<double>(perfect))};
}

Verdict prm_oracle() {
  testing_support::TempDir dir;
  std::mt19937_64 rng(77);
  const PhonemeInventory inv({"sil", "unk", "a", "b"});
  std::uniform_int_distribution<std::size_t> frames(1, 10);
  std::uniform_int_distribution<std::uint32_t> label(0, 3);
  write_inventory(inv, dir / "inv.txt");
  DatasetManifest manifest{"inv.txt", {}, dir.path()};
  std::vector<std::vector<oracle::Grid>> grids;
  std::vector<std::vector<std::uint32_t>> ys;
  for (int u = 0; u < 5; ++u) {
    const std::string id = "u" + std::to_string(u);
    const std::size_t t = frames(rng);
    const AttentionDump dump = testing_support::random_dump(rng, id, 2, 3, t);
    FrameLabels y{id, {}};
    for (std::size_t i = 0; i < t; ++i) y.labels.push_back(label(rng));
    write_attention_dump(dump, dir / (id + ".att"));
    write_features({id, Matrix(t, 1, 0.0)}, dir / (id + ".fea"));
    write_labels(y, dir / (id + ".lab"));
    manifest.entries.push_back({id, id + ".fea", id + ".lab", id + ".att"});
    grids.emplace_back();
    for (std::size_t h = 0; h < 3; ++h) grids.back().push_back(testing_support::to_grid(dump.head_matrix(1, h)));
    ys.push_back(y.labels);
  }
  const PRMatrix prm = prm_aggregate(manifest, {});
  const auto stats = oracle::phoneme_pairs(grids, ys);
  const Matrix mean = prm.mean();
  double worst = 0.0;
  bool counts_match = true;
  for (std::uint32_t m = 0; m < 4; ++m) {
    for (std::uint32_t n = 0; n < 4; ++n) {
      worst = std::max(worst, std::abs(mean(m, n) - stats.mean(m, n)));
      const auto it = stats.counts.find({m, n});
      counts_match = counts_match && prm.count(m, n) == (it == stats.counts.end() ? 0u : it->second);
    }
  }
  return {worst <= 1e-9 && counts_match,
          fmt("5 utterances, P=4, max |error| %.3g (tol 1e-9), counts %s", worst) +
              (counts_match ? "equal" : "DIFFER")};
}

Verdict gradient_check() {
  std::mt19937_64 rng(31337);
  std::normal_distribution<double> g(0.0, 0.7);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 2 + trial % 5, p = 2 + trial % 4, n = 4 + 2 * trial;
    FrameSet frames;
    frames.inputs = Matrix(n, d);
    for (double& v : frames.inputs.values()) v = g(rng);
    std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(p - 1));
    for (std::size_t i = 0; i < n; ++i) frames.labels.push_back(label(rng));
    frames.num_classes = p;
    ProbeModel model = ProbeModel::zeros(d, p);
    for (double& w : model.weight.values()) w = g(rng);
    for (double& b : model.bias) b = g(rng);
    const double l2 = trial % 3 == 0 ? 0.1 : 0.0;
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    const LossAndGradient lg = softmax_cross_entropy(model, frames, rows, l2);

    std::vector<std::vector<double>> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i].assign(frames.inputs.row(i).begin(), frames.inputs.row(i).end());
    std::vector<double> w(model.weight.values().begin(), model.weight.values().end()), b = model.bias;
    const auto loss = [&] { return oracle::cross_entropy(w, b, d, p, xs, frames.labels, l2); };
    const double h = 1e-5;
    const auto rel_error = [&](double& param, double analytic) {
      const double saved = param;
      param = saved + h;
      const long double up = loss();
      param = saved - h;
      const long double down = loss();
      param = saved;
      const double numeric = static_cast<double>((up - down) / (2 * h));
      return std::abs(numeric - analytic) / std::max(1e-8, std::abs(numeric) + std::abs(analytic));
    };
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, rel_error(w[i], lg.grad_weight.values()[i]));
    for (std::size_t c = 0; c < p; ++c) worst = std::max(worst, rel_error(b[c], lg.grad_bias[c]));
  }
  return {worst < 1e-5, fmt("10 cases, max relative error %.3g (tol 1e-5)", worst)};
}

Verdict probe_learning() {
  SynthDatasetConfig config;
  config.num_classes = 4;
  config.prototype_noise = 0.1;
  config.num_utterances = 20;
  config.seed = 11;
  const SynthDataset ds = generate_dataset(config);
  std::vector<Utterance> train(ds.utterances.begin(), ds.utterances.begin() + 16);
  std::vector<Utterance> test(ds.utterances.begin() + 16, ds.utterances.end());
  const RepresentationSource raw;
  ProbeConfig pc;
  pc.num_steps = 50'000;
  pc.seed = 5;
  const ProbeModel model = train_probe(collect_frames(train, 4, raw), pc);
  const EvalResult r = eval_probe(model, collect_frames(test, 4, raw));
  return {r.accuracy >= 0.99, fmt("P=4, noise 0.1, 50000 steps: test accuracy %.4f on %.0f frames (need 0.99)",
                                  r.accuracy, static_cast<double>(r.total))};
}

BatteryAblationConfig ablation_config(std::uint64_t seed, bool retrain) {
  BatteryAblationConfig c;
  c.data.num_utterances = 40;
  c.data.num_classes = 8;
  c.data.prototype_noise = 2.0;
  c.model.num_layers = 3;
  c.model.num_heads = 12;
  c.model.model_dim = 48;
  c.model.feedforward_dim = 96;
  c.model.feature_dim = 16;
  c.probe.num_steps = 2000;
  c.per_category = 12;
  c.seed = seed;
  c.retrain = retrain;
  return c;
}

Verdict ablation_reproduction() {
  double unmasked = 0, all_masked = 0, diag = 0, glob = 0;
  std::size_t below = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_battery_ablation(ablation_config(seed, true));
    unmasked += r.unmasked_accuracy / 5;
    all_masked += r.baseline_all_masked / 5;
    diag += r.fully_masked(Category::Diagonal) / 5;
    glob += r.fully_masked(Category::Global) / 5;
    below += r.fully_masked(Category::Diagonal) < r.baseline_all_masked;
  }
  const double drop_diag = unmasked - diag, drop_glob = unmasked - glob;
  const bool a = diag < all_masked, b = drop_diag > drop_glob;
  return {a && b, fmt("retrained probe, 5 seeds: (a) diagonal-masked %.4f < all-masked %.4f; "
                      "(b) drop diagonal %.4f > drop global %.4f",
                      diag, all_masked, drop_diag, drop_glob) +
                      " [" + std::to_string(below) + "/5 seeds below]"};
}

void ablation_fixed_probe_info() {
  double unmasked = 0, all_masked = 0, diag = 0, glob = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = run_battery_ablation(ablation_config(seed, false));
    unmasked += r.unmasked_accuracy / 5;
    all_masked += r.baseline_all_masked / 5;
    diag += r.fully_masked(Category::Diagonal) / 5;
    glob += r.fully_masked(Category::Global) / 5;
  }
  std::printf("INFO ablation, fixed probe:   diagonal-masked %.4f vs all-masked %.4f; drop diagonal %.4f vs "
              "drop global %.4f\n",
              diag, all_masked, unmasked - diag, unmasked - glob);
}

Verdict determinism() {
#ifdef ATTNPROBE_HAVE_CLI
  testing_support::TempDir dir;
  const auto first = cli_pipeline::run_all(dir.path());
  for (const auto& r : first) {
    if (r.exit_code != 0) return {false, r.subcommand + " exited " + std::to_string(r.exit_code) + ": " + r.err};
  }
  const auto before = cli_pipeline::snapshot(dir.path());
  cli_pipeline::run_all(dir.path());
  const auto after = cli_pipeline::snapshot(dir.path());
  std::size_t differing = 0;
  std::string which;
  for (const auto& [name, bytes] : before) {
    const auto it = after.find(name);
    if (it == after.end() || it->second != bytes) {
      ++differing;
      which += " " + name;
    }
  }
  const bool ok = differing == 0 && before.size() == after.size();
  return {ok, std::to_string(first.size()) + " subcommands, " + std::to_string(before.size()) +
                  " output files, " + std::to_string(differing) + " differ" + which +
                  " (run records compared without wall_time_s)"};
#else
  return {false, "CLI not built (configure with ATTNPROBE_BUILD_TOOLS=ON)"};
#endif
}

Verdict format_round_trips() {
  testing_support::TempDir dir;
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> small(1, 6), frames(1, 24);
  std::normal_distribution<double> g(0.0, 3.0);
  std::size_t ok[5] = {0, 0, 0, 0, 0};
  const int cases = 200;
  for (int i = 0; i < cases; ++i) {
    const std::string id = "utt" + std::to_string(i);

    const auto dump = testing_support::random_dump(rng, id, small(rng), small(rng), frames(rng));
    write_attention_dump(dump, dir / (id + ".att"));
    ok[0] += read_attention_dump(dir / (id + ".att")) == dump;

    Matrix values(frames(rng), small(rng) * 8);
    for (double& v : values.values()) v = g(rng);
    quantize_to_binary32(values.values());
    const FeatureMatrix f{id, values};
    write_features(f, dir / (id + ".fea"));
    ok[1] += read_features(dir / (id + ".fea")) == f;

    TensorBundle bundle;
    const std::size_t count = small(rng);
    for (std::size_t t = 0; t < count; ++t) {
      NamedTensor nt{"t" + std::to_string(t) + ".w", {}, {}};
      const std::size_t rank = small(rng) % 3 + 1;
      std::size_t n = 1;
      for (std::size_t r = 0; r < rank; ++r) {
        nt.dims.push_back(static_cast<std::uint32_t>(small(rng)));
        n *= nt.dims.back();
      }
      for (std::size_t k = 0; k < n; ++k) nt.values.push_back(static_cast<float>(g(rng)));
      bundle.push_back(std::move(nt));
    }
    write_tensor_bundle(bundle, dir / (id + ".wgt"));
    ok[2] += read_tensor_bundle(dir / (id + ".wgt")) == bundle;

    FrameLabels labels{id, {}};
    std::uniform_int_distribution<std::uint32_t> label(0, 40);
    for (std::size_t k = 0, t = frames(rng) - 1; k < t; ++k) labels.labels.push_back(label(rng));
    write_labels(labels, dir / (id + ".lab"));
    ok[3] += read_labels(dir / (id + ".lab")) == labels;

    DatasetManifest m{"inventory.txt", {}, {}};
    for (std::size_t e = 0, n = small(rng); e < n; ++e) {
      const std::string uid = id + "_" + std::to_string(e);
      std::optional<std::filesystem::path> att;
      if (e % 2 == 0) att = "att/" + uid + ".att";
      m.entries.push_back({uid, "fea/" + uid + ".fea", uid + ".lab", att});
    }
    write_manifest(m, dir / (id + ".manifest"));
    ok[4] += read_manifest(dir / (id + ".manifest")) == m;
  }
  const bool pass = std::all_of(std::begin(ok), std::end(ok), [&](std::size_t n) { return n == cases; });
  char buf[200];
  std::snprintf(buf, sizeof buf, "identical after write/read: ATT1 %zu, FEA1 %zu, WGT1 %zu, labels %zu, manifest %zu of %d",
                ok[0], ok[1], ok[2], ok[3], ok[4], cases);
  return {pass, buf};
}

}  // namespace

int main() {
  criterion("metric-closed-forms", 1, metric_closed_forms);
  criterion("oracle-equivalence", 5, oracle_equivalence);
  criterion("categorization-battery", 10, categorization_battery);
  criterion("prm-oracle", 1, prm_oracle);
  criterion("probe-gradient-check", 0, gradient_check);
  criterion("probe-learning", 120, probe_learning);
  criterion("ablation-reproduction", 300, ablation_reproduction);
  ablation_fixed_probe_info();
  criterion("determinism", 0, determinism);
  criterion("format-round-trips", 0, format_round_trips);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
