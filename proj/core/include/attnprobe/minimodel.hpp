#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "attnprobe/matrix.hpp"
#include "attnprobe/tensor_io.hpp"

namespace attnprobe {

struct ModelConfig {
  std::size_t num_layers = 3;
  std::size_t num_heads = 12;
  std::size_t model_dim = 48;
  std::size_t feedforward_dim = 96;
  std::size_t feature_dim = 16;
  std::size_t max_frames = 4096;
  std::uint64_t seed = 0;

  std::size_t head_dim() const noexcept { return model_dim / num_heads; }
  /// Throws BadConfig unless every dim is >= 1 and model_dim % num_heads == 0.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Text file of key=value lines, one per ModelConfig field.
ModelConfig read_model_config(const std::filesystem::path& path);
void write_model_config(const ModelConfig& config, const std::filesystem::path& path);

/// Encoder parameters as named binary32 tensors. Matrices are stored
/// [in, out] so a row of activations multiplies on the left.
///
///   input.weight [F, d]         input.bias [d]
///   layer{l}.attn.{query,key,value,output}.weight [d, d], .bias [d]
///   layer{l}.norm1.{gain,bias} [d]
///   layer{l}.ffn.in.weight [d, ff]  .bias [ff]
///   layer{l}.ffn.out.weight [ff, d] .bias [d]
///   layer{l}.norm2.{gain,bias} [d]
struct ModelWeights {
  ModelConfig config;
  TensorBundle tensors;

  const NamedTensor& get(const std::string& name) const;
  NamedTensor& get(const std::string& name);
};

/// Deterministic init: matrices uniform in [-1/sqrt(d), 1/sqrt(d)], biases 0,
/// layer-norm gains 1.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
/// Throws MissingTensor or ShapeMismatchWithConfig when the file does not fit `config`.
ModelWeights load_weights(const std::filesystem::path& path, const ModelConfig& config);

struct HeadMask {
  std::set<HeadId> masked;

  bool contains(const HeadId& id) const { return masked.contains(id); }
  static HeadMask all(std::size_t layers, std::size_t heads);
  /// Throws InvalidArgument for ids outside (layers, heads).
  void validate(std::size_t layers, std::size_t heads) const;
  /// Parses "l:h,l:h,..." ("" yields an empty mask).
  static HeadMask parse(const std::string& text);
};

/// Per-head T x T attention matrices used in place of softmax(QK^T / sqrt(d_h)).
struct AttentionOverride {
  std::map<HeadId, Matrix> matrices;

  bool empty() const noexcept { return matrices.empty(); }
};

struct ForwardResult {
  Matrix representations;  // T x d, output of the last layer
  AttentionDump attention;
};

/// Double-precision, immutable copy of the weights ready for inference.
/// Forward passes on one Encoder may run concurrently.
class Encoder {
 public:
  explicit Encoder(const ModelWeights& weights);

  const ModelConfig& config() const noexcept { return config_; }

  /// Post-norm encoder stack. Masked heads are still computed and recorded;
  /// only their context is zeroed before the output projection.
  /// Throws ShapeMismatch, RowNotStochastic (bad override) or NonFiniteActivation.
  ForwardResult forward(const Matrix& features, const HeadMask& mask = {},
                        const AttentionOverride& overrides = {}) const;

 private:
  struct Layer {
    Matrix wq, wk, wv, wo;
    std::vector<double> bq, bk, bv, bo;
    std::vector<double> norm1_gain, norm1_bias;
    Matrix ffn_in, ffn_out;
    std::vector<double> ffn_in_bias, ffn_out_bias;
    std::vector<double> norm2_gain, norm2_bias;
  };

  ModelConfig config_;
  Matrix input_weight_;
  std::vector<double> input_bias_;
  std::vector<Layer> layers_;
};

ForwardResult forward(const FeatureMatrix& features, const ModelWeights& weights,
                      const HeadMask& mask = {}, const AttentionOverride& overrides = {});

/// Sinusoidal position table, T x d.
Matrix positional_encoding(std::size_t frames, std::size_t dim);

}  // namespace attnprobe
