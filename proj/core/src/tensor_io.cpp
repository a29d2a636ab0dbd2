#include "attnprobe/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_set>

#include "attnprobe/error.hpp"

namespace attnprobe {
namespace {

constexpr std::size_t kHeaderWord = 4;

class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { bytes_.append(tag, 4); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.append(s); }

  void save(const std::filesystem::path& path) const {
    if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
  }

 private:
  std::string bytes_;
};

std::string slurp(const std::filesystem::path& path, std::ios::openmode mode) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty input path");
  std::ifstream in(path, mode);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::filesystem::path& path)
      : path_(path.string()), bytes_(slurp(path, std::ios::binary)) {}

  void expect_magic(const char (&tag)[5]) {
    need(4);
    if (bytes_.compare(pos_, 4, tag, 4) != 0) {
      fail(ErrorCode::BadMagic, path_ + ": expected magic \"" + std::string(tag) + "\"");
    }
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  /// Confirms `count` more 4-byte words are available before a bulk read.
  void need_words(std::uint64_t count) {
    if (count > (bytes_.size() - pos_) / 4) truncated(count * 4);
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) {
      fail(ErrorCode::ParseError, path_ + ": " + std::to_string(bytes_.size() - pos_) +
                                      " trailing bytes at offset " + std::to_string(pos_));
    }
  }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) truncated(n);
  }
  [[noreturn]] void truncated(std::uint64_t n) const {
    fail(ErrorCode::TruncatedFile, path_ + ": needed " + std::to_string(n) + " bytes at offset " +
                                       std::to_string(pos_) + ", file has " +
                                       std::to_string(bytes_.size()));
  }

  std::string path_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) fail(ErrorCode::ShapeMismatch, std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(slurp(path, std::ios::in));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace

std::string to_string(const HeadId& id) {
  return std::to_string(id.layer) + ":" + std::to_string(id.head);
}

// ---------------------------------------------------------------------------
// AttentionDump

AttentionDump::AttentionDump(std::string utterance_id, std::size_t layers, std::size_t heads,
                             std::size_t frames)
    : utterance_id_(std::move(utterance_id)),
      layers_(layers),
      heads_(heads),
      frames_(frames),
      values_(layers * heads * frames * frames, 0.0) {}

std::span<double> AttentionDump::head(std::size_t layer, std::size_t head) noexcept {
  const std::size_t block = frames_ * frames_;
  return {values_.data() + (layer * heads_ + head) * block, block};
}

std::span<const double> AttentionDump::head(std::size_t layer, std::size_t head) const noexcept {
  const std::size_t block = frames_ * frames_;
  return {values_.data() + (layer * heads_ + head) * block, block};
}

Matrix AttentionDump::head_matrix(std::size_t layer, std::size_t h) const {
  if (layer >= layers_ || h >= heads_) {
    fail(ErrorCode::LayerOutOfRange, "head " + std::to_string(layer) + ":" + std::to_string(h) +
                                         " outside " + std::to_string(layers_) + "x" +
                                         std::to_string(heads_));
  }
  const auto block = head(layer, h);
  return Matrix(frames_, frames_, std::vector<double>(block.begin(), block.end()));
}

void AttentionDump::set_head(std::size_t layer, std::size_t h, const Matrix& attention) {
  if (layer >= layers_ || h >= heads_ || attention.rows() != frames_ ||
      attention.cols() != frames_) {
    fail(ErrorCode::ShapeMismatch, "attention block does not fit dump slot " +
                                       std::to_string(layer) + ":" + std::to_string(h));
  }
  std::ranges::copy(attention.values(), head(layer, h).begin());
}

void AttentionDump::validate(double tolerance) const {
  if (layers_ == 0 || heads_ == 0 || frames_ == 0) {
    fail(ErrorCode::DimensionZero, utterance_id_ + ": L=" + std::to_string(layers_) +
                                       " H=" + std::to_string(heads_) +
                                       " T=" + std::to_string(frames_));
  }
  double worst_dev = -1.0;
  double worst_sum = 0.0;
  std::size_t worst_row = 0;
  const std::size_t rows = layers_ * heads_ * frames_;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = values_.data() + r * frames_;
    double sum = 0.0;
    for (std::size_t k = 0; k < frames_; ++k) {
      if (!(row[k] >= 0.0)) {
        const std::size_t q = r % frames_;
        const std::size_t lh = r / frames_;
        fail(ErrorCode::NegativeEntry, utterance_id_ + ": entry [" + std::to_string(lh / heads_) +
                                           "][" + std::to_string(lh % heads_) + "][" +
                                           std::to_string(q) + "][" + std::to_string(k) +
                                           "] is negative or NaN");
      }
      sum += row[k];
    }
    const double dev = std::abs(sum - 1.0);
    if (dev > worst_dev) {
      worst_dev = dev;
      worst_sum = sum;
      worst_row = r;
    }
  }
  if (worst_dev > tolerance) {
    const std::size_t q = worst_row % frames_;
    const std::size_t lh = worst_row / frames_;
    fail(ErrorCode::RowNotStochastic,
         utterance_id_ + ": worst row [" + std::to_string(lh / heads_) + "][" +
             std::to_string(lh % heads_) + "][" + std::to_string(q) + "] sums to " +
             std::to_string(worst_sum));
  }
}

std::size_t attention_file_size(std::size_t layers, std::size_t heads,
                                 std::size_t frames) noexcept {
  return 4 * kHeaderWord + 4 * layers * heads * frames * frames;
}

AttentionDump read_attention_dump(const std::filesystem::path& path) {
  ByteReader in(path);
  in.expect_magic("ATT1");
  const std::uint32_t layers = in.u32();
  const std::uint32_t heads = in.u32();
  const std::uint32_t frames = in.u32();
  if (layers == 0 || heads == 0 || frames == 0) {
    fail(ErrorCode::DimensionZero, path.string() + ": L=" + std::to_string(layers) +
                                       " H=" + std::to_string(heads) +
                                       " T=" + std::to_string(frames));
  }
  const std::uint64_t count = std::uint64_t{layers} * heads * frames * frames;
  in.need_words(count);
  AttentionDump dump(path.stem().string(), layers, heads, frames);
  for (double& v : dump.values()) v = in.f32();
  in.expect_end();
  dump.validate();
  return dump;
}

void write_attention_dump(const AttentionDump& dump, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("ATT1");
  out.u32(checked_u32(dump.num_layers(), "L"));
  out.u32(checked_u32(dump.num_heads(), "H"));
  out.u32(checked_u32(dump.num_frames(), "T"));
  for (double v : dump.values()) out.f32(static_cast<float>(v));
  out.save(path);
}

// ---------------------------------------------------------------------------
// Features

FeatureMatrix read_features(const std::filesystem::path& path) {
  ByteReader in(path);
  in.expect_magic("FEA1");
  const std::uint32_t frames = in.u32();
  const std::uint32_t dim = in.u32();
  if (dim == 0) fail(ErrorCode::DimensionZero, path.string() + ": F=0");
  in.need_words(std::uint64_t{frames} * dim);
  FeatureMatrix features{path.stem().string(), Matrix(frames, dim)};
  for (double& v : features.values.values()) {
    v = in.f32();
    if (!std::isfinite(v)) fail(ErrorCode::ParseError, path.string() + ": non-finite feature");
  }
  in.expect_end();
  return features;
}

void write_features(const FeatureMatrix& features, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("FEA1");
  out.u32(checked_u32(features.num_frames(), "T"));
  out.u32(checked_u32(features.feature_dim(), "F"));
  for (double v : features.values.values()) out.f32(static_cast<float>(v));
  out.save(path);
}

// ---------------------------------------------------------------------------
// Tensor bundles

std::size_t NamedTensor::element_count() const noexcept {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

TensorBundle read_tensor_bundle(const std::filesystem::path& path) {
  ByteReader in(path);
  in.expect_magic("WGT1");
  const std::uint32_t count = in.u32();
  TensorBundle bundle;
  std::unordered_set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor tensor;
    tensor.name = in.raw(in.u32());
    if (!seen.insert(tensor.name).second) {
      fail(ErrorCode::ParseError, path.string() + ": duplicate tensor '" + tensor.name + "'");
    }
    const std::uint32_t rank = in.u32();
    in.need_words(rank);
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      tensor.dims.push_back(in.u32());
      elements *= tensor.dims.back();
    }
    in.need_words(elements);
    tensor.values.resize(elements);
    for (float& v : tensor.values) v = in.f32();
    bundle.push_back(std::move(tensor));
  }
  in.expect_end();
  return bundle;
}

void write_tensor_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("WGT1");
  out.u32(checked_u32(bundle.size(), "tensor count"));
  for (const auto& tensor : bundle) {
    if (tensor.values.size() != tensor.element_count()) {
      fail(ErrorCode::ShapeMismatch, "tensor '" + tensor.name + "' data does not match dims");
    }
    out.u32(checked_u32(tensor.name.size(), "name length"));
    out.raw(tensor.name);
    out.u32(checked_u32(tensor.dims.size(), "rank"));
    for (auto d : tensor.dims) out.u32(d);
    for (float v : tensor.values) out.f32(v);
  }
  out.save(path);
}

// ---------------------------------------------------------------------------
// Inventory and labels

PhonemeInventory::PhonemeInventory(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) fail(ErrorCode::EmptyInventory, "inventory has no symbols");
  std::set<std::string> unique;
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty() || s.find_first_of(" \t\n\r,") != std::string::npos) {
      fail(ErrorCode::ParseError, "symbol " + std::to_string(i) + " is empty or has whitespace");
    }
    if (!unique.insert(s).second) {
      fail(ErrorCode::ParseError, "duplicate symbol '" + s + "' at line " + std::to_string(i + 1));
    }
  }
  if (!unique.contains(kSilence) || !unique.contains(kUnknown)) {
    fail(ErrorCode::ParseError, "inventory must contain reserved symbols 'sil' and 'unk'");
  }
}

std::optional<std::uint32_t> PhonemeInventory::find(const std::string& symbol) const {
  const auto it = std::ranges::find(symbols_, symbol);
  if (it == symbols_.end()) return std::nullopt;
  return static_cast<std::uint32_t>(it - symbols_.begin());
}

PhonemeInventory read_inventory(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) fail(ErrorCode::EmptyInventory, path.string() + " is empty");
  return PhonemeInventory(std::move(lines));
}

void write_inventory(const PhonemeInventory& inventory, const std::filesystem::path& path) {
  std::string text;
  for (const auto& s : inventory.symbols()) text += s + "\n";
  write_text(path, text);
}

void FrameLabels::validate(std::size_t inventory_size) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= inventory_size) {
      fail(ErrorCode::LabelOutOfRange, utterance_id + ": frame " + std::to_string(i) + " has id " +
                                           std::to_string(labels[i]) + " but inventory size is " +
                                           std::to_string(inventory_size));
    }
  }
}

FrameLabels read_labels(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0].empty()) {
    fail(ErrorCode::ParseError, path.string() + ":1: missing utterance id");
  }
  if (lines.size() > 2 && std::ranges::any_of(lines.begin() + 2, lines.end(),
                                              [](const auto& l) { return !l.empty(); })) {
    fail(ErrorCode::ParseError, path.string() + ":3: unexpected content after label line");
  }
  FrameLabels out{lines[0], {}};
  if (lines.size() < 2) return out;
  std::istringstream in(lines[1]);
  std::string token;
  std::size_t column = 0;
  while (in >> token) {
    ++column;
    std::size_t used = 0;
    unsigned long value = 0;
    try {
      value = std::stoul(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || token.front() == '-' || value > 0xffffffffUL) {
      fail(ErrorCode::ParseError, path.string() + ":2: token " + std::to_string(column) +
                                      " '" + token + "' is not a class id");
    }
    out.labels.push_back(static_cast<std::uint32_t>(value));
  }
  return out;
}

void write_labels(const FrameLabels& labels, const std::filesystem::path& path) {
  std::string text = labels.utterance_id + "\n";
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (i) text += ' ';
    text += std::to_string(labels.labels[i]);
  }
  text += "\n";
  write_text(path, text);
}

void quantize_to_binary32(std::span<double> values) noexcept {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace attnprobe
