#include "attnprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {
namespace {

constexpr std::size_t kLossWindow = 1000;

void softmax_inplace(std::span<double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& v : logits) total += (v = std::exp(v - peak));
  for (double& v : logits) v /= total;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::BadConfig, "learning rate must be finite and >= 0");
  }
  if (batch_size == 0) fail(ErrorCode::BadConfig, "batch size must be >= 1");
  if (num_steps == 0) fail(ErrorCode::BadConfig, "num_steps must be >= 1");
  if (!(l2_penalty >= 0.0)) fail(ErrorCode::BadConfig, "l2 penalty must be >= 0");
}

ProbeModel ProbeModel::zeros(std::size_t input_dim, std::size_t classes) {
  return {Matrix(input_dim, classes), std::vector<double>(classes, 0.0)};
}

std::vector<double> ProbeModel::probabilities(std::span<const double> x) const {
  std::vector<double> logits = bias;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto w = weight.row(i);
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += x[i] * w[c];
  }
  softmax_inplace(logits);
  return logits;
}

std::uint32_t ProbeModel::predict(std::span<const double> x) const {
  std::vector<double> logits = bias;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto w = weight.row(i);
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += x[i] * w[c];
  }
  return static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::uint64_t utterance_key(const std::string& utterance_id) noexcept {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : utterance_id) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

ForwardResult RepresentationSource::run(const FeatureMatrix& features) const {
  if (encoder == nullptr) fail(ErrorCode::InvalidArgument, "no encoder configured");
  AttentionOverride overrides;
  if (injected != nullptr) {
    overrides = injected->overrides_for(features.num_frames(), utterance_key(features.utterance_id));
  }
  ForwardResult r = encoder->forward(features.values, mask, overrides);
  r.attention.set_utterance_id(features.utterance_id);
  return r;
}

Matrix RepresentationSource::encode(const FeatureMatrix& features) const {
  if (encoder == nullptr) return features.values;
  return run(features).representations;
}

namespace {

FrameSet stack_frames(std::vector<Matrix> encoded, const std::vector<const FrameLabels*>& labels,
                      std::size_t num_classes) {
  std::size_t total = 0;
  std::size_t dim = 0;
  for (const auto& m : encoded) {
    if (m.rows() > 0 && dim != 0 && m.cols() != dim) {
      fail(ErrorCode::ShapeMismatch, "utterances disagree on representation width");
    }
    if (m.rows() > 0) dim = m.cols();
    total += m.rows();
  }
  FrameSet set{Matrix(total, dim), {}, num_classes};
  set.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    for (std::size_t t = 0; t < encoded[i].rows(); ++t, ++row) {
      std::ranges::copy(encoded[i].row(t), set.inputs.row(row).begin());
    }
    set.labels.insert(set.labels.end(), labels[i]->labels.begin(), labels[i]->labels.end());
  }
  return set;
}

}  // namespace

FrameSet collect_frames(std::span<const Utterance> utterances, std::size_t num_classes,
                        const RepresentationSource& source, std::size_t jobs) {
  std::vector<Matrix> encoded(utterances.size());
  std::vector<const FrameLabels*> labels(utterances.size());
  parallel_for(utterances.size(), jobs, [&](std::size_t i) {
    const Utterance& u = utterances[i];
    if (u.labels.size() != u.features.num_frames()) {
      fail(ErrorCode::LengthMismatch, u.features.utterance_id + ": labels and features differ in length");
    }
    u.labels.validate(num_classes);
    encoded[i] = source.encode(u.features);
    labels[i] = &u.labels;
  });
  return stack_frames(std::move(encoded), labels, num_classes);
}

FrameSet collect_frames(const DatasetManifest& manifest, const RepresentationSource& source,
                        std::size_t jobs) {
  const PhonemeInventory inventory = load_inventory(manifest);
  std::vector<Utterance> utterances(manifest.size());
  parallel_for(manifest.size(), jobs, [&](std::size_t i) { utterances[i] = load_utterance(manifest, i); });
  return collect_frames(utterances, inventory.size(), source, jobs);
}

LossAndGradient softmax_cross_entropy(const ProbeModel& model, const FrameSet& frames,
                                      std::span<const std::size_t> rows, double l2_penalty) {
  const std::size_t d = model.input_dim();
  const std::size_t p = model.num_classes();
  LossAndGradient out{0.0, Matrix(d, p), std::vector<double>(p, 0.0)};
  if (rows.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  std::vector<double> prob(p);
  for (std::size_t r : rows) {
    const auto x = frames.inputs.row(r);
    const std::uint32_t y = frames.labels[r];
    prob = model.bias;
    for (std::size_t i = 0; i < d; ++i) {
      const auto w = model.weight.row(i);
      for (std::size_t c = 0; c < p; ++c) prob[c] += x[i] * w[c];
    }
    softmax_inplace(prob);
    out.loss -= std::log(std::max(prob[y], 1e-300)) * inv_n;
    prob[y] -= 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      auto g = out.grad_weight.row(i);
      const double xi = x[i] * inv_n;
      for (std::size_t c = 0; c < p; ++c) g[c] += xi * prob[c];
    }
    for (std::size_t c = 0; c < p; ++c) out.grad_bias[c] += prob[c] * inv_n;
  }
  if (l2_penalty > 0.0) {
    double norm = 0.0;
    for (std::size_t i = 0; i < model.weight.size(); ++i) {
      const double w = model.weight.values()[i];
      norm += w * w;
      out.grad_weight.values()[i] += l2_penalty * w;
    }
    out.loss += 0.5 * l2_penalty * norm;
  }
  return out;
}

ProbeModel train_probe(const FrameSet& train, const ProbeConfig& config) {
  config.validate();
  if (train.size() == 0) fail(ErrorCode::EmptyTrainingSet, "no training frames");
  if (train.num_classes == 0) fail(ErrorCode::InventoryMismatch, "frame set has no classes");

  ProbeModel model = ProbeModel::zeros(train.inputs.cols(), train.num_classes);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<std::size_t> batch(config.batch_size);

  double window_sum = 0.0;
  double previous_window = std::nan("");
  for (std::size_t step = 0; step < config.num_steps; ++step) {
    for (auto& b : batch) b = pick(rng);
    const LossAndGradient lg = softmax_cross_entropy(model, train, batch, config.l2_penalty);
    if (!std::isfinite(lg.loss)) {
      fail(ErrorCode::NonFiniteLoss, "loss diverged at step " + std::to_string(step));
    }
    for (std::size_t i = 0; i < model.weight.size(); ++i) {
      model.weight.values()[i] -= config.learning_rate * lg.grad_weight.values()[i];
    }
    for (std::size_t c = 0; c < model.bias.size(); ++c) {
      model.bias[c] -= config.learning_rate * lg.grad_bias[c];
    }

    window_sum += lg.loss;
    if ((step + 1) % kLossWindow == 0) {
      const double mean = window_sum / static_cast<double>(kLossWindow);
      if (mean > previous_window) {
        log_message(1, "warning: mean loss rose to " + format_real(mean) + " over steps ending " +
                           std::to_string(step + 1));
      }
      log_message(2, "step " + std::to_string(step + 1) + " mean loss " + format_real(mean));
      previous_window = mean;
      window_sum = 0.0;
    }
  }
  return model;
}

ProbeModel train_probe(const DatasetManifest& train_manifest, const RepresentationSource& source,
                       const ProbeConfig& config, std::size_t jobs) {
  if (train_manifest.size() == 0) fail(ErrorCode::EmptyTrainingSet, "training manifest is empty");
  return train_probe(collect_frames(train_manifest, source, jobs), config);
}

EvalResult eval_probe(const ProbeModel& model, const FrameSet& frames) {
  if (model.num_classes() != frames.num_classes) {
    fail(ErrorCode::InventoryMismatch, "probe predicts " + std::to_string(model.num_classes()) +
                                           " classes, data has " +
                                           std::to_string(frames.num_classes));
  }
  if (frames.size() > 0 && model.input_dim() != frames.inputs.cols()) {
    fail(ErrorCode::ShapeMismatch, "probe input width " + std::to_string(model.input_dim()) +
                                       " vs representation width " +
                                       std::to_string(frames.inputs.cols()));
  }
  const std::size_t p = frames.num_classes;
  EvalResult result{0.0, 0, frames.size(), std::vector<std::uint64_t>(p * p, 0), p};
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const std::uint32_t predicted = model.predict(frames.inputs.row(r));
    const std::uint32_t truth = frames.labels[r];
    ++result.confusion[truth * p + predicted];
    if (predicted == truth) ++result.correct;
  }
  result.accuracy = result.total == 0 ? 0.0
                                      : static_cast<double>(result.correct) /
                                            static_cast<double>(result.total);
  return result;
}

EvalResult eval_probe(const ProbeModel& model, const DatasetManifest& manifest,
                      const RepresentationSource& source, std::size_t jobs) {
  return eval_probe(model, collect_frames(manifest, source, jobs));
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    fail(ErrorCode::BadRatio, "split ratio " + std::to_string(ratio) + " outside (0, 1)");
  }
  const std::size_t n = manifest.size();
  if (n < 2) fail(ErrorCode::TooFewUtterances, "need at least 2 utterances to split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {select_entries(manifest, train), select_entries(manifest, test)};
}

void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
  const auto d = static_cast<std::uint32_t>(model.input_dim());
  const auto p = static_cast<std::uint32_t>(model.num_classes());
  NamedTensor w{"probe.weight", {d, p}, {}};
  for (double v : model.weight.values()) w.values.push_back(static_cast<float>(v));
  NamedTensor b{"probe.bias", {p}, {}};
  for (double v : model.bias) b.values.push_back(static_cast<float>(v));
  write_tensor_bundle({w, b}, path);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  const TensorBundle bundle = read_tensor_bundle(path);
  auto find = [&](const std::string& name) -> const NamedTensor& {
    const auto it = std::ranges::find(bundle, name, &NamedTensor::name);
    if (it == bundle.end()) fail(ErrorCode::MissingTensor, path.string() + ": " + name);
    return *it;
  };
  const NamedTensor& w = find("probe.weight");
  const NamedTensor& b = find("probe.bias");
  if (w.dims.size() != 2 || b.dims.size() != 1 || b.dims[0] != w.dims[1]) {
    fail(ErrorCode::ShapeMismatch, path.string() + ": probe tensor shapes disagree");
  }
  ProbeModel model{Matrix(w.dims[0], w.dims[1], std::vector<double>(w.values.begin(), w.values.end())),
                   std::vector<double>(b.values.begin(), b.values.end())};
  return model;
}

void write_eval_report(std::span<const EvalReportRow> rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "pretrain,finetune,masked_heads,accuracy\n";
  for (const auto& r : rows) {
    char acc[64];
    std::snprintf(acc, sizeof(acc), "%.10g", r.accuracy);
    out << r.pretrain << ',' << r.finetune << ',' << r.masked_heads << ',' << acc << '\n';
  }
  write_file(path, out.str());
}

std::vector<EvalReportRow> read_eval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("pretrain,finetune,masked_heads,accuracy", 0) != 0) {
    fail(ErrorCode::ParseError, path.string() + ":1: not an evaluation report header");
  }
  std::vector<EvalReportRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 4) fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      rows.push_back({f[0], f[1], std::stoul(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

void write_confusion_csv(const EvalResult& result, const PhonemeInventory& inventory,
                         const std::filesystem::path& path) {
  if (inventory.size() != result.num_classes) {
    fail(ErrorCode::InventoryMismatch, "confusion matrix and inventory sizes differ");
  }
  const std::size_t p = result.num_classes;
  std::ostringstream out;
  out << "true\\predicted";
  for (std::size_t c = 0; c < p; ++c) out << ',' << inventory.symbol(c);
  out << '\n';
  for (std::size_t t = 0; t < p; ++t) {
    out << inventory.symbol(t);
    for (std::size_t c = 0; c < p; ++c) out << ',' << result.confusion[t * p + c];
    out << '\n';
  }
  write_file(path, out.str());
}

}  // namespace attnprobe
