#include <attnprobe/ablation.hpp>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace attnprobe;
using testing_support::TempDir;

namespace {

std::vector<HeadScores> three_diagonal_heads() {
  return {{{0, 0}, 0.0, 0.0, -0.1, 1}, {{0, 1}, 0.0, 0.0, -0.2, 1}, {{0, 2}, 0.0, 0.0, -0.15, 1}};
}

std::vector<HeadCategory> all_diagonal(const std::vector<HeadScores>& s) {
  std::vector<HeadCategory> out;
  for (const auto& x : s) out.push_back({x.head, Category::Diagonal, {}});
  return out;
}

struct AblationSetup {
  ModelConfig config;
  ModelWeights weights;
  SynthDataset data;
  ProbeModel probe;
};

AblationSetup small_setup() {
  AblationSetup s;
  s.config.num_layers = 1;
  s.config.num_heads = 2;
  s.config.model_dim = 8;
  s.config.feedforward_dim = 8;
  s.config.feature_dim = 4;
  s.weights = init_weights(s.config, 3);
  SynthDatasetConfig dc;
  dc.num_utterances = 4;
  dc.min_frames = 10;
  dc.max_frames = 20;
  dc.feature_dim = 4;
  dc.prototype_noise = 0.5;
  s.data = generate_dataset(dc);
  const Encoder enc(s.weights);
  ProbeConfig pc;
  pc.num_steps = 300;
  s.probe = train_probe(collect_frames(s.data.utterances, 4, RepresentationSource{&enc}), pc);
  return s;
}

}  // namespace

TEST(Rank, DescendingRawScore) {
  const auto s = three_diagonal_heads();
  const auto ranked = rank_heads(s, all_diagonal(s), Category::Diagonal);
  EXPECT_EQ(ranked, (std::vector<HeadId>{{0, 0}, {0, 2}, {0, 1}}));
  EXPECT_TRUE(rank_heads(s, all_diagonal(s), Category::Vertical).empty());
}

TEST(Rank, TiesByHeadId) {
  std::vector<HeadScores> s{{{1, 0}, 0, 0, -0.1, 1}, {{0, 3}, 0, 0, -0.1, 1}, {{0, 1}, 0, 0, -0.1, 1}};
  EXPECT_EQ(rank_heads(s, all_diagonal(s), Category::Diagonal),
            (std::vector<HeadId>{{0, 1}, {0, 3}, {1, 0}}));
}

TEST(Cumulative, StepZeroIsUnmaskedAccuracy) {
  const AblationSetup s = small_setup();
  const Encoder enc(s.weights);
  RepresentationSource source{&enc};
  const std::vector<HeadId> ranked{{0, 1}, {0, 0}};
  const AblationCurve curve =
      ablate_cumulative(source, s.probe, s.data.utterances, 4, ranked, Category::Global);
  ASSERT_EQ(curve.accuracy_at_step.size(), 3u);
  EXPECT_EQ(curve.accuracy_at_step[0],
            eval_probe(s.probe, collect_frames(s.data.utterances, 4, source)).accuracy);
  // Both heads masked is the all-masked configuration.
  EXPECT_EQ(curve.accuracy_at_step[2], curve.baseline_all_masked);
  AblationOptions jobs;
  jobs.jobs = 3;
  EXPECT_EQ(ablate_cumulative(source, s.probe, s.data.utterances, 4, ranked, Category::Global, jobs),
            curve);
}

TEST(Cumulative, ZeroInfluenceHeadIsNoOp) {
  AblationSetup s = small_setup();
  // Head 1's value columns are zero, so its context is already zero.
  const std::size_t d = s.config.model_dim, dh = s.config.head_dim();
  auto& wv = s.weights.get("layer0.attn.value.weight");
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = dh; c < 2 * dh; ++c) wv.values[r * d + c] = 0.0f;
  const Encoder enc(s.weights);
  RepresentationSource source{&enc};
  ProbeConfig pc;
  pc.num_steps = 300;
  const ProbeModel probe = train_probe(collect_frames(s.data.utterances, 4, source), pc);
  const std::vector<HeadId> ranked{{0, 1}};
  const AblationCurve curve =
      ablate_cumulative(source, probe, s.data.utterances, 4, ranked, Category::Vertical);
  EXPECT_EQ(curve.accuracy_at_step[1], curve.accuracy_at_step[0]);
}

TEST(Cumulative, RetrainNeedsTrainingData) {
  const AblationSetup s = small_setup();
  const Encoder enc(s.weights);
  AblationOptions options;
  options.retrain = true;
  EXPECT_ERROR_CODE(ablate_cumulative(RepresentationSource{&enc}, s.probe, s.data.utterances, 4, {},
                                      Category::Global, options),
                    InvalidArgument);
}

TEST(Curves, LengthContractAndRoundTrip) {
  TempDir dir;
  AblationCurve curve;
  curve.category = Category::Diagonal;
  for (std::size_t h = 0; h < 12; ++h) curve.ranked_heads.push_back({h / 4, h % 4});
  for (std::size_t i = 0; i <= 12; ++i) curve.accuracy_at_step.push_back(0.9 - 0.05 * i);
  curve.baseline_all_masked = 0.4;
  emit_curve(curve, dir / "c.csv");
  const std::string text = testing_support::read_bytes(dir / "c.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 13 + 1);
  EXPECT_EQ(text.rfind("category,step,masked_head,accuracy\ndiagonal,0,none,0.9\ndiagonal,1,0:0,", 0), 0u);
  EXPECT_NE(text.find("\ndiagonal,baseline,all,0.4\n"), std::string::npos);
  const auto back = read_curves(dir / "c.csv");
  ASSERT_EQ(back.size(), 1u);
  ASSERT_EQ(back[0].accuracy_at_step.size(), 13u);
  EXPECT_EQ(back[0].ranked_heads, curve.ranked_heads);
  for (std::size_t i = 0; i <= 12; ++i)
    EXPECT_DOUBLE_EQ(back[0].accuracy_at_step[i], curve.accuracy_at_step[i]);
  EXPECT_EQ(back[0].baseline_all_masked, 0.4);
}

TEST(Curves, EmptyCategoryIsHeaderPlusBaseline) {
  TempDir dir;
  AblationCurve curve;
  curve.category = Category::Vertical;
  curve.accuracy_at_step = {0.8};
  curve.baseline_all_masked = 0.5;
  emit_curve(curve, dir / "c.csv");
  EXPECT_EQ(testing_support::read_bytes(dir / "c.csv"),
            "category,step,masked_head,accuracy\nvertical,baseline,all,0.5\n");
  const auto back = read_curves(dir / "c.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(back[0].ranked_heads.empty());
  EXPECT_EQ(back[0].baseline_all_masked, 0.5);
}
