#include <attnprobe/prm.hpp>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace attnprobe;
using testing_support::TempDir;

namespace {

PhonemeInventory inv_ab() { return PhonemeInventory({"sil", "unk", "a", "b"}); }

}  // namespace

TEST(Prm, HandEnumeratedTwoByTwo) {
  PRMatrix prm(inv_ab());
  prm.accumulate(Matrix(2, 2, std::vector<double>{0.7, 0.3, 0.4, 0.6}), FrameLabels{"u", {2, 3}});
  const Matrix mean = prm.mean();
  EXPECT_DOUBLE_EQ(mean(2, 2), 0.7);
  EXPECT_DOUBLE_EQ(mean(2, 3), 0.3);
  EXPECT_DOUBLE_EQ(mean(3, 2), 0.4);
  EXPECT_DOUBLE_EQ(mean(3, 3), 0.6);
  EXPECT_EQ(prm.count(2, 3), 1u);
  EXPECT_EQ(prm.count(0, 0), 0u);
  EXPECT_EQ(mean(0, 0), 0.0);
  EXPECT_EQ(prm.populated()[0], 0);
  EXPECT_EQ(prm.populated()[2 * 4 + 3], 1);
}

TEST(Prm, SingleFrame) {
  const PRMatrix prm = prm_accumulate(Matrix::identity(1), FrameLabels{"u", {2}}, PRMatrix(inv_ab()));
  EXPECT_EQ(prm.mean()(2, 2), 1.0);
}

TEST(Prm, UniformAttentionGivesOneOverT) {
  const std::size_t t = 6;
  PRMatrix prm(inv_ab());
  prm.accumulate(testing_support::uniform(t), FrameLabels{"u", {0, 2, 2, 3, 1, 3}});
  const Matrix mean = prm.mean();
  for (std::size_t m = 0; m < 4; ++m)
    for (std::size_t n = 0; n < 4; ++n)
      if (prm.count(m, n) > 0) EXPECT_NEAR(mean(m, n), 1.0 / t, 1e-15);
}

TEST(Prm, DuplicatedDataKeepsMean) {
  std::mt19937_64 rng(4);
  const Matrix a = testing_support::to_matrix(oracle::random_stochastic(5, rng));
  const FrameLabels y{"u", {2, 2, 3, 0, 3}};
  PRMatrix once(inv_ab());
  once.accumulate(a, y);
  PRMatrix twice = once;
  twice.accumulate(a, y);
  EXPECT_EQ(twice.count(2, 3), 2 * once.count(2, 3));
  const Matrix m1 = once.mean(), m2 = twice.mean();
  for (std::size_t i = 0; i < m1.size(); ++i) EXPECT_NEAR(m1.values()[i], m2.values()[i], 1e-15);
}

TEST(Prm, Errors) {
  PRMatrix prm(inv_ab());
  EXPECT_ERROR_CODE(prm.accumulate(Matrix::identity(3), FrameLabels{"u", {2, 3}}), LengthMismatch);
  PRMatrix other(PhonemeInventory({"sil", "unk"}));
  EXPECT_ERROR_CODE(prm.merge(other), InventoryMismatch);
}

TEST(Prm, SelfDominance) {
  PRMatrix prm(inv_ab());
  prm.accumulate(Matrix(2, 2, std::vector<double>{0.7, 0.3, 0.4, 0.6}), FrameLabels{"u", {2, 3}});
  EXPECT_DOUBLE_EQ(prm.self_dominance(), 1.0);
  PRMatrix cross(inv_ab());
  cross.accumulate(Matrix(2, 2, std::vector<double>{0.2, 0.8, 0.4, 0.6}), FrameLabels{"u", {2, 3}});
  EXPECT_DOUBLE_EQ(cross.self_dominance(), 0.5);
}

TEST(PrmExport, CsvFixture) {
  TempDir dir;
  PRMatrix prm(PhonemeInventory({"a", "b", "sil", "unk"}));
  prm.accumulate(Matrix(2, 2, std::vector<double>{0.7, 0.3, 0.4, 0.6}), FrameLabels{"u", {0, 1}});
  PrmExportOptions options;
  options.mask_path = dir / "mask.csv";
  options.pgm_path = dir / "prm.pgm";
  export_prm(prm, dir / "prm.csv", options);
  EXPECT_EQ(testing_support::read_bytes(dir / "prm.csv"),
            ",a,b,sil,unk\na,0.7,0.3,0,0\nb,0.4,0.6,0,0\nsil,0,0,0,0\nunk,0,0,0,0\n");
  EXPECT_EQ(testing_support::read_bytes(dir / "mask.csv"),
            ",a,b,sil,unk\na,1,1,0,0\nb,1,1,0,0\nsil,0,0,0,0\nunk,0,0,0,0\n");
  const std::string pgm = testing_support::read_bytes(dir / "prm.pgm");
  EXPECT_EQ(pgm.rfind("P5\n4 4\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n4 4\n255\n").size() + 16);

  options = {};
  options.transpose = true;
  export_prm(prm, dir / "t.csv", options);
  EXPECT_EQ(testing_support::read_bytes(dir / "t.csv"),
            ",a,b,sil,unk\na,0.7,0.4,0,0\nb,0.3,0.6,0,0\nsil,0,0,0,0\nunk,0,0,0,0\n");
}

TEST(PrmExport, FortyOnePhonemesGiveFortyTwoLines) {
  TempDir dir;
  std::vector<std::string> symbols{"sil", "unk"};
  for (int i = 0; i < 39; ++i) symbols.push_back("p" + std::to_string(i));
  export_prm(PRMatrix(PhonemeInventory(symbols)), dir / "prm.csv");
  const std::string text = testing_support::read_bytes(dir / "prm.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 42);
  const std::string first = text.substr(0, text.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 41);
}

namespace {

struct Fixture {
  TempDir dir;
  DatasetManifest manifest;
  std::vector<AttentionDump> dumps;
  std::vector<FrameLabels> labels;
};

void build_dataset(Fixture& f, std::uint64_t seed, std::size_t utterances) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> frames(1, 10);
  const PhonemeInventory inv({"sil", "unk", "a", "b"});
  std::uniform_int_distribution<std::uint32_t> label(0, 3);
  write_inventory(inv, f.dir / "inv.txt");
  f.manifest.inventory = "inv.txt";
  f.manifest.base_dir = f.dir.path();
  for (std::size_t u = 0; u < utterances; ++u) {
    const std::string id = "u" + std::to_string(u);
    const std::size_t t = frames(rng);
    f.dumps.push_back(testing_support::random_dump(rng, id, 2, 3, t));
    FrameLabels y{id, {}};
    for (std::size_t i = 0; i < t; ++i) y.labels.push_back(label(rng));
    f.labels.push_back(y);
    write_attention_dump(f.dumps.back(), f.dir / (id + ".att"));
    write_features({id, Matrix(t, 1, 0.0)}, f.dir / (id + ".fea"));
    write_labels(y, f.dir / (id + ".lab"));
    f.manifest.entries.push_back({id, id + ".fea", id + ".lab", id + ".att"});
  }
}

}  // namespace

TEST(PrmAggregate, MatchesQuadrupleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Fixture f;
    build_dataset(f, seed, 4);
    const std::vector<std::size_t> heads{0, 2};
    PrmSelection sel;
    sel.layer = 1;
    sel.heads = heads;
    const PRMatrix prm = prm_aggregate(f.manifest, sel, 3);

    std::vector<std::vector<oracle::Grid>> grids;
    std::vector<std::vector<std::uint32_t>> ys;
    for (std::size_t u = 0; u < f.dumps.size(); ++u) {
      grids.emplace_back();
      for (auto h : heads) grids.back().push_back(testing_support::to_grid(f.dumps[u].head_matrix(1, h)));
      ys.push_back(f.labels[u].labels);
    }
    const auto stats = oracle::phoneme_pairs(grids, ys);
    const Matrix mean = prm.mean();
    for (std::uint32_t m = 0; m < 4; ++m) {
      for (std::uint32_t n = 0; n < 4; ++n) {
        EXPECT_NEAR(mean(m, n), stats.mean(m, n), 1e-9);
        const auto it = stats.counts.find({m, n});
        EXPECT_EQ(prm.count(m, n), it == stats.counts.end() ? 0u : it->second);
      }
    }
  }
}

TEST(PrmAggregate, DefaultsToLastLayerAllHeads) {
  Fixture f;
  build_dataset(f, 9, 3);
  const PRMatrix all = prm_aggregate(f.manifest, {});
  PRMatrix expected(PhonemeInventory({"sil", "unk", "a", "b"}));
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t h = 0; h < 3; ++h) expected.accumulate(f.dumps[u].head_matrix(1, h), f.labels[u]);
  EXPECT_EQ(all.counts(), expected.counts());
  EXPECT_EQ(all.sums(), expected.sums());

  PrmSelection one;
  one.max_utterances = 1;
  one.layer = 0;
  one.heads = std::vector<std::size_t>{1};
  const PRMatrix single = prm_aggregate(f.manifest, one);
  const PRMatrix direct = prm_accumulate(f.dumps[0].head_matrix(0, 1), f.labels[0],
                                         PRMatrix(PhonemeInventory({"sil", "unk", "a", "b"})));
  EXPECT_EQ(single.sums(), direct.sums());
}

TEST(PrmAggregate, SelectionErrors) {
  Fixture f;
  build_dataset(f, 2, 1);
  PrmSelection bad_layer;
  bad_layer.layer = 2;
  EXPECT_ERROR_CODE(prm_aggregate(f.manifest, bad_layer), LayerOutOfRange);
  PrmSelection no_heads;
  no_heads.heads = std::vector<std::size_t>{};
  EXPECT_ERROR_CODE(prm_aggregate(f.manifest, no_heads), EmptyHeadSet);
}
