#include <benchmark/benchmark.h>

#include <random>

#include "sevq/evaluation.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/model.hpp"
#include "sevq/nn/layers.hpp"
#include "sevq/synthetic.hpp"
#include "sevq/training.hpp"
#include "test_support.hpp"

using namespace sevq;

namespace {

TrainingSample desk_sample() {
  const TrainConfig c = TrainConfig::desk();
  const SyntheticCase s = generate_synthetic_case(1, SyntheticConfig{});
  return make_training_sample("bench", s.image, s.mask, c.preprocess, s.label);
}

void BM_RoiMaxPool(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  LungMask mask(side, side, 0);
  testing::fill_ellipse(mask, side * 0.5, side * 0.27, side * 0.3, side * 0.15);
  testing::fill_ellipse(mask, side * 0.5, side * 0.73, side * 0.3, side * 0.15);
  const RegionPartition partition = build_region_partition(mask);
  const ProbabilityMap map = testing::random_map(rng, side, side);
  for (auto _ : state) benchmark::DoNotOptimize(roi_max_pool(map, partition));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_RoiMaxPool)->Arg(64)->Arg(256);

void BM_RegionPartition(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  LungMask mask(side, side, 0);
  testing::fill_ellipse(mask, side * 0.5, side * 0.27, side * 0.3, side * 0.15);
  testing::fill_ellipse(mask, side * 0.5, side * 0.73, side * 0.3, side * 0.15);
  for (auto _ : state) benchmark::DoNotOptimize(build_region_partition(mask));
}
BENCHMARK(BM_RegionPartition)->Arg(64)->Arg(256);

void BM_Conv3x3(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  nn::ParamStore params;
  nn::Rng rng(1);
  const nn::Conv2d conv(params, rng, "conv", channels, channels, 3, 1, 1);
  nn::FeatureMap x(channels, 64, 64);
  x.data.setRandom();
  nn::Conv2d::Cache cache;
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(params, x, cache));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_DeskForward(benchmark::State& state) {
  const Model model(ModelConfig::desk(), 1);
  const TrainingSample s = desk_sample();
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(s.image, s.mask, s.partition));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

void BM_DeskForwardBackward(benchmark::State& state) {
  const Model model(ModelConfig::desk(), 1);
  const TrainingSample s = desk_sample();
  nn::ParamStore grads = model.params().zeros_like();
  for (auto _ : state) {
    const auto trace = model.forward_trace(s.image, s.mask, s.partition);
    model.backward(*trace, bce_gradient(model.output(*trace).pooled.array, *s.label), grads);
  }
}
BENCHMARK(BM_DeskForwardBackward)->Unit(benchmark::kMillisecond);

void BM_MeanAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SeverityArray> pred;
  std::vector<SeverityArray> truth;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kNumRegions> p{};
    std::array<double, kNumRegions> t{};
    for (std::size_t k = 0; k < kNumRegions; ++k) {
      p[k] = u(rng);
      t[k] = u(rng) < 0.4 ? 1.0 : 0.0;
    }
    pred.push_back(SeverityArray::probability(p));
    truth.push_back(SeverityArray::binary(t));
  }
  for (auto _ : state) benchmark::DoNotOptimize(mean_auc(pred, truth));
}
BENCHMARK(BM_MeanAuc)->Arg(200)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
