#include <attnprobe/error.hpp>
#include <attnprobe/matrix.hpp>
#include <attnprobe/support.hpp>

#include <gtest/gtest.h>

#include <atomic>

#include "test_support.hpp"

using namespace attnprobe;

TEST(Matrix, MatmulAndTranspose) {
  const Matrix a(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Matrix b = transpose(a);
  EXPECT_EQ(b(2, 1), 6.0);
  const Matrix c = matmul(a, b);
  EXPECT_EQ(c, Matrix(2, 2, std::vector<double>{14, 32, 32, 77}));
}

TEST(Matrix, WorstRowSum) {
  const Matrix m(3, 2, std::vector<double>{0.5, 0.5, 0.2, 0.7, 1.0, 0.0});
  const auto w = worst_row_sum(m);
  EXPECT_EQ(w.row, 1u);
  EXPECT_NEAR(w.sum, 0.9, 1e-15);
  EXPECT_NEAR(w.deviation, 0.1, 1e-15);
}

TEST(Support, FormatReal) {
  EXPECT_EQ(format_real(0.5), "0.5");
  EXPECT_EQ(format_real(-0.3125), "-0.3125");
  EXPECT_EQ(format_real(1.0 / 3.0), "0.333333333");
}

TEST(Support, DeriveSeedSpreads) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(Support, ParallelForCoversAndRethrows) {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_ERROR_CODE(parallel_for(10, 3,
                                 [](std::size_t i) {
                                   if (i == 7) fail(ErrorCode::ParseError, "boom");
                                 }),
                    ParseError);
}

TEST(Support, FileDigest) {
  testing_support::TempDir dir;
  testing_support::write_bytes(dir / "a", "");
  // FNV-1a 64 offset basis for the empty input.
  EXPECT_EQ(file_digest(dir / "a"), "cbf29ce484222325");
  testing_support::write_bytes(dir / "b", "a");
  EXPECT_EQ(file_digest(dir / "b"), "af63dc4c8601ec8c");
}

TEST(Error, CodeNamesAndIoFlag) {
  const Error e(ErrorCode::IoFailure, "x");
  EXPECT_TRUE(e.is_io());
  EXPECT_FALSE(Error(ErrorCode::BadMagic, "y").is_io());
  EXPECT_EQ(to_string(ErrorCode::RowNotStochastic), std::string("RowNotStochastic"));
}
