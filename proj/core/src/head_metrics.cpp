#include "attnprobe/head_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attnprobe/error.hpp"
#include "attnprobe/support.hpp"

namespace attnprobe {
namespace {

void require_square(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    fail(ErrorCode::ShapeMismatch, "attention must be a non-empty square matrix, got " +
                                       std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

template <typename PerMatrix>
double mean_over(std::span<const Matrix> per_utterance, PerMatrix metric) {
  if (per_utterance.empty()) fail(ErrorCode::EmptyUtteranceSet, "no utterances to average");
  double total = 0.0;
  for (const auto& m : per_utterance) total += metric(m);
  return total / static_cast<double>(per_utterance.size());
}

// The three per-utterance metrics over a raw T x T block.
double block_globalness(std::span<const double> a, std::size_t t) {
  double total = 0.0;
  for (std::size_t q = 0; q < t; ++q) total += row_entropy(a.subspan(q * t, t));
  return total / static_cast<double>(t);
}

double block_diagonalness(std::span<const double> a, std::size_t t) {
  double total = 0.0;
  for (std::size_t q = 0; q < t; ++q) {
    for (std::size_t k = 0; k < t; ++k) {
      const double distance = q > k ? static_cast<double>(q - k) : static_cast<double>(k - q);
      total += distance * a[q * t + k];
    }
  }
  return -total / static_cast<double>(t * t);
}

double block_verticality(std::span<const double> a, std::size_t t) {
  std::vector<double> column_mean(t, 0.0);
  for (std::size_t q = 0; q < t; ++q)
    for (std::size_t k = 0; k < t; ++k) column_mean[k] += a[q * t + k];
  for (double& v : column_mean) v /= static_cast<double>(t);
  return -row_entropy(column_mean);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::Global: return "global";
    case Category::Vertical: return "vertical";
    case Category::Diagonal: return "diagonal";
  }
  return "?";
}

Category parse_category(std::string_view text) {
  const std::string t = lower(text);
  if (t == "global") return Category::Global;
  if (t == "vertical") return Category::Vertical;
  if (t == "diagonal") return Category::Diagonal;
  fail(ErrorCode::InvalidArgument, "unknown category '" + std::string(text) + "'");
}

double HeadScores::score(Category c) const noexcept {
  switch (c) {
    case Category::Global: return globalness;
    case Category::Vertical: return verticality;
    case Category::Diagonal: return diagonalness;
  }
  return 0.0;
}

std::size_t CategoryCounts::of(Category c) const noexcept {
  switch (c) {
    case Category::Global: return global;
    case Category::Vertical: return vertical;
    case Category::Diagonal: return diagonal;
  }
  return 0;
}

double row_entropy(std::span<const double> row) {
  double h = 0.0;
  for (double p : row) {
    if (p < 0.0) fail(ErrorCode::NegativeEntry, "probability " + std::to_string(p) + " < 0");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double globalness(const Matrix& a) {
  require_square(a);
  return block_globalness(a.values(), a.rows());
}

double diagonalness(const Matrix& a) {
  require_square(a);
  return block_diagonalness(a.values(), a.rows());
}

double verticality(const Matrix& a) {
  require_square(a);
  return block_verticality(a.values(), a.rows());
}

double globalness(std::span<const Matrix> per_utterance) {
  return mean_over(per_utterance, [](const Matrix& m) { return globalness(m); });
}

double diagonalness(std::span<const Matrix> per_utterance) {
  return mean_over(per_utterance, [](const Matrix& m) { return diagonalness(m); });
}

double verticality(std::span<const Matrix> per_utterance) {
  return mean_over(per_utterance, [](const Matrix& m) { return verticality(m); });
}

std::vector<std::size_t> sample_utterances(std::size_t count, std::size_t sample_size,
                                           std::uint64_t seed) {
  if (sample_size == 0) fail(ErrorCode::EmptyUtteranceSet, "sample size is zero");
  if (sample_size > count) {
    fail(ErrorCode::SampleLargerThanDataset, "sample of " + std::to_string(sample_size) +
                                                 " from " + std::to_string(count) + " utterances");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(sample_size);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<HeadScores> score_dumps(std::span<const AttentionDump> dumps, std::size_t jobs) {
  if (dumps.empty()) fail(ErrorCode::EmptyUtteranceSet, "no attention dumps to score");
  const std::size_t layers = dumps.front().num_layers();
  const std::size_t heads = dumps.front().num_heads();
  for (const auto& d : dumps) {
    if (d.num_layers() != layers || d.num_heads() != heads) {
      fail(ErrorCode::MismatchedModelShape,
           d.utterance_id() + " has " + std::to_string(d.num_layers()) + "x" +
               std::to_string(d.num_heads()) + " heads, expected " + std::to_string(layers) +
               "x" + std::to_string(heads));
    }
  }

  std::vector<HeadScores> scores(layers * heads);
  parallel_for(scores.size(), jobs, [&](std::size_t index) {
    const HeadId id{index / heads, index % heads};
    HeadScores s{id, 0.0, 0.0, 0.0, dumps.size()};
    for (const auto& d : dumps) {
      const auto block = d.head(id.layer, id.head);
      const std::size_t t = d.num_frames();
      s.globalness += block_globalness(block, t);
      s.verticality += block_verticality(block, t);
      s.diagonalness += block_diagonalness(block, t);
    }
    const double n = static_cast<double>(dumps.size());
    s.globalness /= n;
    s.verticality /= n;
    s.diagonalness /= n;
    scores[index] = s;
  });
  return scores;
}

std::vector<HeadScores> score_all(const DatasetManifest& manifest, std::size_t sample_size,
                                  std::uint64_t seed, std::size_t jobs) {
  const auto chosen = sample_utterances(manifest.size(), sample_size, seed);
  std::vector<AttentionDump> dumps(chosen.size());
  parallel_for(chosen.size(), jobs,
               [&](std::size_t i) { dumps[i] = load_attention(manifest, chosen[i]); });
  return score_dumps(dumps, jobs);
}

std::vector<HeadCategory> categorize(std::span<const HeadScores> scores) {
  if (scores.size() < 2) {
    fail(ErrorCode::SingleHead, "z-scores need at least two heads, got " +
                                    std::to_string(scores.size()));
  }
  const double n = static_cast<double>(scores.size());
  std::vector<HeadCategory> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i].head = scores[i].head;

  for (Category c : kAllCategories) {
    double mean = 0.0;
    double scale = 1.0;
    for (const auto& s : scores) {
      mean += s.score(c);
      scale = std::max(scale, std::abs(s.score(c)));
    }
    mean /= n;
    double var = 0.0;
    for (const auto& s : scores) var += (s.score(c) - mean) * (s.score(c) - mean);
    const double stddev = std::sqrt(var / n);
    const bool zero_variance = stddev <= 1e-12 * scale;
    if (zero_variance) log_message(1, std::string("zero variance in ") + std::string(to_string(c)));
    for (std::size_t i = 0; i < scores.size(); ++i) {
      out[i].z_scores[static_cast<std::size_t>(c)] =
          zero_variance ? 0.0 : (scores[i].score(c) - mean) / stddev;
    }
  }

  for (auto& hc : out) {
    const double zg = hc.z_scores[static_cast<std::size_t>(Category::Global)];
    const double zv = hc.z_scores[static_cast<std::size_t>(Category::Vertical)];
    const double zd = hc.z_scores[static_cast<std::size_t>(Category::Diagonal)];
    if (zd >= zv && zd >= zg) {
      hc.category = Category::Diagonal;
    } else if (zv >= zg) {
      hc.category = Category::Vertical;
    } else {
      hc.category = Category::Global;
    }
  }
  return out;
}

CategoryCounts category_counts(std::span<const HeadCategory> categories) {
  CategoryCounts counts;
  for (const auto& c : categories) {
    switch (c.category) {
      case Category::Global: ++counts.global; break;
      case Category::Vertical: ++counts.vertical; break;
      case Category::Diagonal: ++counts.diagonal; break;
    }
  }
  return counts;
}

std::array<MetricSummary, 3> summarize(std::span<const HeadScores> scores,
                                       std::span<const HeadCategory> categories) {
  if (!categories.empty() && categories.size() != scores.size()) {
    fail(ErrorCode::LengthMismatch, "scores and categories differ in length");
  }
  std::array<MetricSummary, 3> out{};
  for (Category c : kAllCategories) {
    auto& m = out[static_cast<std::size_t>(c)];
    m.category = c;
    double all = 0.0;
    double within = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      all += scores[i].score(c);
      if (!categories.empty() && categories[i].category == c) {
        within += scores[i].score(c);
        ++m.heads_in_category;
      }
    }
    m.mean_all_heads = scores.empty() ? std::nan("") : all / static_cast<double>(scores.size());
    m.mean_within_category = m.heads_in_category == 0
                                 ? std::nan("")
                                 : within / static_cast<double>(m.heads_in_category);
  }
  return out;
}

void write_scores_csv(std::span<const HeadScores> scores, std::span<const HeadCategory> categories,
                      const std::filesystem::path& path) {
  if (!categories.empty() && categories.size() != scores.size()) {
    fail(ErrorCode::LengthMismatch, "scores and categories differ in length");
  }
  std::ostringstream out;
  out << "layer,head,globalness,verticality,diagonalness,category\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    out << s.head.layer << ',' << s.head.head << ',' << format_real(s.globalness) << ','
        << format_real(s.verticality) << ',' << format_real(s.diagonalness) << ',';
    if (!categories.empty()) out << to_string(categories[i].category);
    out << '\n';
  }
  if (path.empty()) fail(ErrorCode::IoFailure, "empty output path");
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  file << out.str();
  if (!file) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

ScoreTable read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (path.empty() || !in) fail(ErrorCode::IoFailure, "cannot open scores " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line.rfind("layer,head,globalness,verticality,diagonalness", 0) != 0) {
    fail(ErrorCode::ParseError, path.string() + ":1: not a scores CSV header");
  }
  ScoreTable table;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) +
                                      ": expected 6 fields");
    }
    try {
      HeadScores s;
      s.head = {std::stoul(fields[0]), std::stoul(fields[1])};
      s.globalness = std::stod(fields[2]);
      s.verticality = std::stod(fields[3]);
      s.diagonalness = std::stod(fields[4]);
      s.utterance_count = 0;
      table.scores.push_back(s);
      table.categories.push_back(fields[5].empty() ? std::nullopt
                                                   : std::optional(parse_category(fields[5])));
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return table;
}

}  // namespace attnprobe
