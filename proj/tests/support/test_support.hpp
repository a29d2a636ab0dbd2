#pragma once

#include <gtest/gtest.h>

#include <attnprobe/error.hpp>
#include <attnprobe/matrix.hpp>
#include <attnprobe/tensor_io.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "attnprobe_test";
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    static std::uint64_t counter = 0;
    name += "_" + std::to_string(counter++);
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline attnprobe::Matrix to_matrix(const oracle::Grid& g) {
  attnprobe::Matrix m(g.size(), g.size());
  for (std::size_t r = 0; r < g.size(); ++r)
    for (std::size_t c = 0; c < g.size(); ++c) m(r, c) = g[r][c];
  return m;
}

inline oracle::Grid to_grid(const attnprobe::Matrix& m) {
  oracle::Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  return g;
}

inline attnprobe::Matrix uniform(std::size_t t) { return attnprobe::Matrix(t, t, 1.0 / t); }

inline attnprobe::Matrix one_hot_column(std::size_t t, std::size_t column) {
  attnprobe::Matrix m(t, t);
  for (std::size_t r = 0; r < t; ++r) m(r, column) = 1.0;
  return m;
}

/// Random dump whose values are already binary32-representable, so a file
/// round trip must reproduce it exactly.
inline attnprobe::AttentionDump random_dump(std::mt19937_64& rng, const std::string& id,
                                            std::size_t layers, std::size_t heads,
                                            std::size_t frames) {
  attnprobe::AttentionDump dump(id, layers, heads, frames);
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      dump.set_head(l, h, to_matrix(oracle::random_stochastic(frames, rng)));
  attnprobe::quantize_to_binary32(dump.values());
  return dump;
}

}  // namespace testing_support

/// Asserts that `stmt` throws attnprobe::Error with the given code.
#define EXPECT_ERROR_CODE(stmt, expected)                                            \
  do {                                                                               \
    try {                                                                            \
      stmt;                                                                          \
      ADD_FAILURE() << #stmt " did not throw";                                       \
    } catch (const attnprobe::Error& err_) {                                         \
      EXPECT_EQ(err_.code(), attnprobe::ErrorCode::expected) << err_.what();         \
    }                                                                                \
  } while (false)
