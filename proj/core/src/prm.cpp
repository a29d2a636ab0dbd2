#include "attnprobe/prm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {
namespace {

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << bytes;
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

template <typename Cell>
std::string grid_csv(const PhonemeInventory& inventory, bool transpose, Cell cell) {
  const std::size_t p = inventory.size();
  std::ostringstream out;
  for (std::size_t n = 0; n < p; ++n) out << ',' << inventory.symbol(n);
  out << '\n';
  for (std::size_t m = 0; m < p; ++m) {
    out << inventory.symbol(m);
    for (std::size_t n = 0; n < p; ++n) out << ',' << (transpose ? cell(n, m) : cell(m, n));
    out << '\n';
  }
  return out.str();
}

}  // namespace

PRMatrix::PRMatrix(PhonemeInventory inventory)
    : inventory_(std::move(inventory)),
      sums_(inventory_.size(), inventory_.size()),
      counts_(inventory_.size() * inventory_.size(), 0) {}

Matrix PRMatrix::mean() const {
  Matrix out(size(), size());
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    if (counts_[i] > 0) out.values()[i] = sums_.values()[i] / static_cast<double>(counts_[i]);
  }
  return out;
}

std::vector<std::uint8_t> PRMatrix::populated() const {
  std::vector<std::uint8_t> mask(counts_.size());
  for (std::size_t i = 0; i < counts_.size(); ++i) mask[i] = counts_[i] > 0 ? 1 : 0;
  return mask;
}

void PRMatrix::accumulate(const Matrix& attention, const FrameLabels& labels) {
  if (attention.rows() != attention.cols()) {
    fail(ErrorCode::ShapeMismatch, "attention matrix is not square");
  }
  accumulate(attention.values(), attention.rows(), labels);
}

void PRMatrix::accumulate(std::span<const double> attention, std::size_t frames,
                          const FrameLabels& labels) {
  if (labels.size() != frames || attention.size() != frames * frames) {
    fail(ErrorCode::LengthMismatch, labels.utterance_id + ": " + std::to_string(labels.size()) +
                                        " labels for T=" + std::to_string(frames));
  }
  labels.validate(size());
  const std::size_t p = size();
  for (std::size_t q = 0; q < frames; ++q) {
    const std::size_t row_base = labels.labels[q] * p;
    const double* row = attention.data() + q * frames;
    for (std::size_t k = 0; k < frames; ++k) {
      const std::size_t cell = row_base + labels.labels[k];
      sums_.values()[cell] += row[k];
      ++counts_[cell];
    }
  }
}

void PRMatrix::merge(const PRMatrix& other) {
  if (!(other.inventory_ == inventory_)) {
    fail(ErrorCode::InventoryMismatch, "cannot merge relation maps over different inventories");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    sums_.values()[i] += other.sums_.values()[i];
    counts_[i] += other.counts_[i];
  }
}

double PRMatrix::self_dominance() const {
  const Matrix m = mean();
  std::size_t rows = 0;
  std::size_t self = 0;
  for (std::size_t r = 0; r < size(); ++r) {
    bool any = false;
    for (std::size_t c = 0; c < size(); ++c) any = any || count(r, c) > 0;
    if (!any) continue;
    ++rows;
    const auto row = m.row(r);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (static_cast<std::size_t>(best) == r) ++self;
  }
  return rows == 0 ? 0.0 : static_cast<double>(self) / static_cast<double>(rows);
}

PRMatrix prm_accumulate(const Matrix& attention, const FrameLabels& labels, PRMatrix acc) {
  acc.accumulate(attention, labels);
  return acc;
}

PRMatrix prm_aggregate(const DatasetManifest& manifest, const PrmSelection& selection,
                       std::size_t jobs) {
  if (selection.heads && selection.heads->empty()) {
    fail(ErrorCode::EmptyHeadSet, "no heads selected");
  }
  const PhonemeInventory inventory = load_inventory(manifest);
  std::size_t count = manifest.size();
  if (selection.max_utterances > 0) count = std::min(count, selection.max_utterances);
  if (count == 0) fail(ErrorCode::EmptyUtteranceSet, "manifest has no utterances");

  std::vector<PRMatrix> partial(count, PRMatrix(inventory));
  parallel_for(count, jobs, [&](std::size_t i) {
    const AttentionDump dump = load_attention(manifest, i);
    FrameLabels labels = read_labels(manifest.resolve(manifest.entries[i].labels));
    const std::size_t layer = selection.layer.value_or(dump.num_layers() - 1);
    if (layer >= dump.num_layers()) {
      fail(ErrorCode::LayerOutOfRange, "layer " + std::to_string(layer) + " of " +
                                           std::to_string(dump.num_layers()));
    }
    std::vector<std::size_t> heads;
    if (selection.heads) {
      heads = *selection.heads;
    } else {
      heads.resize(dump.num_heads());
      for (std::size_t h = 0; h < heads.size(); ++h) heads[h] = h;
    }
    for (std::size_t h : heads) {
      if (h >= dump.num_heads()) {
        fail(ErrorCode::InvalidArgument, "head " + std::to_string(h) + " of " +
                                             std::to_string(dump.num_heads()));
      }
      partial[i].accumulate(dump.head(layer, h), dump.num_frames(), labels);
    }
  });

  PRMatrix total(inventory);
  for (const auto& p : partial) total.merge(p);
  return total;
}

void export_prm(const PRMatrix& prm, const std::filesystem::path& path,
                const PrmExportOptions& options) {
  const Matrix mean = prm.mean();
  write_file(path, grid_csv(prm.inventory(), options.transpose, [&](std::size_t m, std::size_t n) {
               return format_real(mean(m, n));
             }));
  if (options.mask_path) {
    write_file(*options.mask_path,
               grid_csv(prm.inventory(), options.transpose, [&](std::size_t m, std::size_t n) {
                 return prm.count(m, n) > 0 ? std::string("1") : std::string("0");
               }));
  }
  if (options.pgm_path) write_pgm(options.transpose ? transpose(mean) : mean, *options.pgm_path);
}

void write_pgm(const Matrix& values, const std::filesystem::path& path) {
  const auto v = values.values();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = v.empty() ? 0.0 : *lo_it;
  const double hi = v.empty() ? 0.0 : *hi_it;
  std::string bytes = "P5\n" + std::to_string(values.cols()) + " " +
                      std::to_string(values.rows()) + "\n255\n";
  for (double x : v) {
    const double unit = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
  write_file(path, bytes);
}

}  // namespace attnprobe
