#include "attnprobe/minimodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {
namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kOverrideTolerance = 1e-6;

std::string layer_name(std::size_t l, const std::string& suffix) {
  return "layer" + std::to_string(l) + "." + suffix;
}

struct TensorPlan {
  std::string name;
  std::vector<std::uint32_t> dims;
  enum class Init { Uniform, Zero, One } init;
};

std::vector<TensorPlan> tensor_plan(const ModelConfig& c) {
  const auto d = static_cast<std::uint32_t>(c.model_dim);
  const auto f = static_cast<std::uint32_t>(c.feature_dim);
  const auto ff = static_cast<std::uint32_t>(c.feedforward_dim);
  using I = TensorPlan::Init;
  std::vector<TensorPlan> plan{{"input.weight", {f, d}, I::Uniform}, {"input.bias", {d}, I::Zero}};
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    for (const char* p : {"query", "key", "value", "output"}) {
      plan.push_back({layer_name(l, std::string("attn.") + p + ".weight"), {d, d}, I::Uniform});
      plan.push_back({layer_name(l, std::string("attn.") + p + ".bias"), {d}, I::Zero});
    }
    plan.push_back({layer_name(l, "norm1.gain"), {d}, I::One});
    plan.push_back({layer_name(l, "norm1.bias"), {d}, I::Zero});
    plan.push_back({layer_name(l, "ffn.in.weight"), {d, ff}, I::Uniform});
    plan.push_back({layer_name(l, "ffn.in.bias"), {ff}, I::Zero});
    plan.push_back({layer_name(l, "ffn.out.weight"), {ff, d}, I::Uniform});
    plan.push_back({layer_name(l, "ffn.out.bias"), {d}, I::Zero});
    plan.push_back({layer_name(l, "norm2.gain"), {d}, I::One});
    plan.push_back({layer_name(l, "norm2.bias"), {d}, I::Zero});
  }
  return plan;
}

Matrix to_matrix(const NamedTensor& t) {
  std::vector<double> v(t.values.begin(), t.values.end());
  return Matrix(t.dims.at(0), t.dims.at(1), std::move(v));
}

std::vector<double> to_vector(const NamedTensor& t) { return {t.values.begin(), t.values.end()}; }

void add_bias(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias[c];
  }
}

Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix out = matmul(x, w);
  add_bias(out, b);
  return out;
}

void layer_norm_inplace(Matrix& x, const std::vector<double>& gain, const std::vector<double>& bias) {
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean) * inv * gain[c] + bias[c];
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

void softmax_rows_inplace(Matrix& scores) {
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
}

/// A masked head contributes nothing downstream: its context columns are
/// zeroed ahead of the output projection.
void mask_head_context(Matrix& context, std::size_t head, std::size_t head_dim) {
  for (std::size_t r = 0; r < context.rows(); ++r) {
    auto row = context.row(r);
    std::fill_n(row.begin() + static_cast<std::ptrdiff_t>(head * head_dim), head_dim, 0.0);
  }
}

void check_finite(const Matrix& m, const char* stage) {
  for (double v : m.values()) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteActivation, std::string("non-finite value after ") + stage);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0 || num_heads == 0 || model_dim == 0 || feedforward_dim == 0 ||
      feature_dim == 0 || max_frames == 0) {
    fail(ErrorCode::BadConfig, "all model dimensions must be >= 1");
  }
  if (model_dim % num_heads != 0) {
    fail(ErrorCode::BadConfig, "model_dim " + std::to_string(model_dim) +
                                   " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

ModelConfig read_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open config " + path.string());
  ModelConfig c;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorCode::ParseError, where + ": expected key=value");
    std::istringstream key_in(line.substr(0, eq));
    std::string key;
    key_in >> key;
    std::uint64_t value = 0;
    std::istringstream value_in(line.substr(eq + 1));
    std::string rest;
    if (!(value_in >> value) || (value_in >> rest)) {
      fail(ErrorCode::ParseError, where + ": '" + key + "' needs a non-negative integer");
    }
    if (key == "num_layers") c.num_layers = value;
    else if (key == "num_heads") c.num_heads = value;
    else if (key == "model_dim") c.model_dim = value;
    else if (key == "feedforward_dim") c.feedforward_dim = value;
    else if (key == "feature_dim") c.feature_dim = value;
    else if (key == "max_frames") c.max_frames = value;
    else if (key == "seed") c.seed = value;
    else fail(ErrorCode::ParseError, where + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

void write_model_config(const ModelConfig& c, const std::filesystem::path& path) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << "num_layers=" << c.num_layers << "\nnum_heads=" << c.num_heads
      << "\nmodel_dim=" << c.model_dim << "\nfeedforward_dim=" << c.feedforward_dim
      << "\nfeature_dim=" << c.feature_dim << "\nmax_frames=" << c.max_frames
      << "\nseed=" << c.seed << "\n";
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

const NamedTensor& ModelWeights::get(const std::string& name) const {
  const auto it = std::ranges::find(tensors, name, &NamedTensor::name);
  if (it == tensors.end()) fail(ErrorCode::MissingTensor, name);
  return *it;
}

NamedTensor& ModelWeights::get(const std::string& name) {
  const auto it = std::ranges::find(tensors, name, &NamedTensor::name);
  if (it == tensors.end()) fail(ErrorCode::MissingTensor, name);
  return *it;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights w{config, {}};
  w.config.seed = seed;
  Rng rng(seed);
  const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(config.model_dim)));
  std::uniform_real_distribution<float> uniform(-bound, bound);
  for (auto& plan : tensor_plan(config)) {
    NamedTensor t{plan.name, plan.dims, {}};
    t.values.resize(t.element_count());
    switch (plan.init) {
      case TensorPlan::Init::Uniform:
        for (float& v : t.values) v = uniform(rng);
        break;
      case TensorPlan::Init::Zero: break;
      case TensorPlan::Init::One: std::ranges::fill(t.values, 1.0f); break;
    }
    w.tensors.push_back(std::move(t));
  }
  return w;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  write_tensor_bundle(weights.tensors, path);
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  config.validate();
  ModelWeights w{config, read_tensor_bundle(path)};
  for (const auto& plan : tensor_plan(config)) {
    const auto& t = w.get(plan.name);
    if (t.dims != plan.dims) {
      std::string want, got;
      for (auto d : plan.dims) want += std::to_string(d) + " ";
      for (auto d : t.dims) got += std::to_string(d) + " ";
      fail(ErrorCode::ShapeMismatchWithConfig,
           plan.name + ": dims [" + got + "] but config needs [" + want + "]");
    }
    for (float v : t.values) {
      if (!std::isfinite(v)) fail(ErrorCode::ParseError, plan.name + " has a non-finite entry");
    }
  }
  return w;
}

HeadMask HeadMask::all(std::size_t layers, std::size_t heads) {
  HeadMask m;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) m.masked.insert({l, h});
  return m;
}

void HeadMask::validate(std::size_t layers, std::size_t heads) const {
  for (const auto& id : masked) {
    if (id.layer >= layers || id.head >= heads) {
      fail(ErrorCode::InvalidArgument, "masked head " + to_string(id) + " outside " +
                                           std::to_string(layers) + "x" + std::to_string(heads));
    }
  }
}

HeadMask HeadMask::parse(const std::string& text) {
  HeadMask m;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used_l = 0, used_h = 0;
      const auto l = std::stoul(item.substr(0, colon), &used_l);
      const auto h = std::stoul(item.substr(colon + 1), &used_h);
      if (used_l != colon || used_h != item.size() - colon - 1) throw std::invalid_argument(item);
      m.masked.insert({l, h});
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "head '" + item + "' is not layer:head");
    }
  }
  return m;
}

Matrix positional_encoding(std::size_t frames, std::size_t dim) {
  Matrix pe(frames, dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(i - i % 2) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      pe(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Encoder::Encoder(const ModelWeights& w) : config_(w.config) {
  config_.validate();
  input_weight_ = to_matrix(w.get("input.weight"));
  input_bias_ = to_vector(w.get("input.bias"));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    auto m = [&](const std::string& s) { return to_matrix(w.get(layer_name(l, s))); };
    auto v = [&](const std::string& s) { return to_vector(w.get(layer_name(l, s))); };
    layers_.push_back(Layer{
        m("attn.query.weight"), m("attn.key.weight"), m("attn.value.weight"),
        m("attn.output.weight"), v("attn.query.bias"), v("attn.key.bias"), v("attn.value.bias"),
        v("attn.output.bias"), v("norm1.gain"), v("norm1.bias"), m("ffn.in.weight"),
        m("ffn.out.weight"), v("ffn.in.bias"), v("ffn.out.bias"), v("norm2.gain"),
        v("norm2.bias")});
  }
}

ForwardResult Encoder::forward(const Matrix& features, const HeadMask& mask,
                               const AttentionOverride& overrides) const {
  const std::size_t frames = features.rows();
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.head_dim();
  if (features.cols() != config_.feature_dim) {
    fail(ErrorCode::ShapeMismatch, "features have F=" + std::to_string(features.cols()) +
                                       ", model expects " + std::to_string(config_.feature_dim));
  }
  if (frames == 0 || frames > config_.max_frames) {
    fail(ErrorCode::ShapeMismatch, "T=" + std::to_string(frames) + " outside [1, " +
                                       std::to_string(config_.max_frames) + "]");
  }
  mask.validate(config_.num_layers, heads);
  for (const auto& [id, m] : overrides.matrices) {
    if (id.layer >= config_.num_layers || id.head >= heads) {
      fail(ErrorCode::InvalidArgument, "override for head " + to_string(id) + " outside model");
    }
    if (m.rows() != frames || m.cols() != frames) {
      fail(ErrorCode::ShapeMismatch, "override for head " + to_string(id) + " is not " +
                                         std::to_string(frames) + "x" + std::to_string(frames));
    }
    const auto worst = worst_row_sum(m);
    if (worst.deviation > kOverrideTolerance ||
        std::ranges::any_of(m.values(), [](double v) { return !(v >= 0.0); })) {
      fail(ErrorCode::RowNotStochastic, "override for head " + to_string(id) + " row " +
                                            std::to_string(worst.row) + " sums to " +
                                            std::to_string(worst.sum));
    }
  }

  ForwardResult result{Matrix(), AttentionDump("", config_.num_layers, heads, frames)};
  Matrix x = affine(features, input_weight_, input_bias_);
  const Matrix pe = positional_encoding(frames, config_.model_dim);
  for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += pe.values()[i];

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const Matrix q = affine(x, layer.wq, layer.bq);
    const Matrix k = affine(x, layer.wk, layer.bk);
    const Matrix v = affine(x, layer.wv, layer.bv);
    Matrix context(frames, config_.model_dim);

    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const HeadId id{l, h};
      Matrix attn;
      if (const auto it = overrides.matrices.find(id); it != overrides.matrices.end()) {
        attn = it->second;
      } else {
        attn = Matrix(frames, frames);
        for (std::size_t qi = 0; qi < frames; ++qi) {
          const auto qrow = q.row(qi);
          for (std::size_t ki = 0; ki < frames; ++ki) {
            const auto krow = k.row(ki);
            double dot = 0.0;
            for (std::size_t j = 0; j < dh; ++j) dot += qrow[off + j] * krow[off + j];
            attn(qi, ki) = dot * scale;
          }
        }
        softmax_rows_inplace(attn);
      }
      result.attention.set_head(l, h, attn);

      for (std::size_t qi = 0; qi < frames; ++qi) {
        auto crow = context.row(qi);
        for (std::size_t ki = 0; ki < frames; ++ki) {
          const double a = attn(qi, ki);
          if (a == 0.0) continue;
          const auto vrow = v.row(ki);
          for (std::size_t j = 0; j < dh; ++j) crow[off + j] += a * vrow[off + j];
        }
      }
      if (mask.contains(id)) mask_head_context(context, h, dh);
    }

    Matrix attended = affine(context, layer.wo, layer.bo);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += attended.values()[i];
    layer_norm_inplace(x, layer.norm1_gain, layer.norm1_bias);

    Matrix hidden = affine(x, layer.ffn_in, layer.ffn_in_bias);
    for (double& hv : hidden.values()) hv = gelu(hv);
    const Matrix ffn = affine(hidden, layer.ffn_out, layer.ffn_out_bias);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += ffn.values()[i];
    layer_norm_inplace(x, layer.norm2_gain, layer.norm2_bias);
    check_finite(x, "encoder layer");
  }
  result.representations = std::move(x);
  return result;
}

ForwardResult forward(const FeatureMatrix& features, const ModelWeights& weights,
                      const HeadMask& mask, const AttentionOverride& overrides) {
  ForwardResult r = Encoder(weights).forward(features.values, mask, overrides);
  r.attention.set_utterance_id(features.utterance_id);
  return r;
}

}  // namespace attnprobe
