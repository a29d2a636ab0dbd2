#include <benchmark/benchmark.h>

#include <attnprobe/head_metrics.hpp>
#include <attnprobe/minimodel.hpp>
#include <attnprobe/prm.hpp>
#include <attnprobe/synth.hpp>

#include <random>

using namespace attnprobe;

namespace {

Matrix random_attention(std::size_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  Matrix m(t, t);
  for (std::size_t q = 0; q < t; ++q) {
    double sum = 0.0;
    for (std::size_t k = 0; k < t; ++k) sum += m(q, k) = e(rng);
    for (std::size_t k = 0; k < t; ++k) m(q, k) /= sum;
  }
  return m;
}

void BM_HeadScores(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_attention(t, 1);
  for (auto _ : state) {
    double g = globalness(a), d = diagonalness(a), v = verticality(a);
    benchmark::DoNotOptimize(g + d + v);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(t * t));
}
BENCHMARK(BM_HeadScores)->RangeMultiplier(4)->Range(16, 1024);

void BM_EncoderForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  ModelConfig config;
  const Encoder encoder(init_weights(config, 3));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Matrix x(t, config.feature_dim);
  for (double& v : x.values()) v = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(encoder.forward(x));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(t));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_PrmAccumulate(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const PhonemeInventory inventory = synthetic_inventory(39);
  const Matrix a = random_attention(t, 5);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::uint32_t> label(0, static_cast<std::uint32_t>(inventory.size() - 1));
  FrameLabels labels{"bench", {}};
  for (std::size_t i = 0; i < t; ++i) labels.labels.push_back(label(rng));
  PRMatrix prm(inventory);
  for (auto _ : state) {
    prm.accumulate(a, labels);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(t * t));
}
BENCHMARK(BM_PrmAccumulate)->RangeMultiplier(4)->Range(16, 1024);

}  // namespace

BENCHMARK_MAIN();
