#include <benchmark/benchmark.h>

#include <random>

#include "saligraph/grad.hpp"
#include "saligraph/layers.hpp"
#include "saligraph/metrics.hpp"
#include "saligraph/model.hpp"
#include "saligraph/saliency.hpp"

using namespace saligraph;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

const Model& model() {
  static const Model m = [] {
    MiniVggConfig cfg;
    cfg.seed = 1;
    return build_minivgg(cfg);
  }();
  return m;
}

void BM_Conv3x3(benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({ch, 32, 32}, 1);
  const Conv2d conv{noise({ch, ch, 3, 3}, 2), Tensor({ch}), 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(apply_layer(x, conv));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(16)->Arg(32);

void BM_Forward(benchmark::State& state) {
  const Tensor x = noise(model().input_shape, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model(), x));
}
BENCHMARK(BM_Forward);

void BM_Backward(benchmark::State& state) {
  const ForwardTrace t = forward(model(), noise(model().input_shape, 4));
  for (auto _ : state) benchmark::DoNotOptimize(backward(model(), t, 0, rule::Standard{}));
}
BENCHMARK(BM_Backward);

void BM_RectGrad(benchmark::State& state) {
  const ForwardTrace t = forward(model(), noise(model().input_shape, 5));
  for (auto _ : state) benchmark::DoNotOptimize(backward(model(), t, 0, rule::RectGrad{98}));
}
BENCHMARK(BM_RectGrad);

void BM_LrpZPlus(benchmark::State& state) {
  const ForwardTrace t = forward(model(), noise(model().input_shape, 6));
  for (auto _ : state) benchmark::DoNotOptimize(lrp(model(), t, 0, rule::LrpZPlus{}));
}
BENCHMARK(BM_LrpZPlus);

void BM_FullGrad(benchmark::State& state) {
  const ForwardTrace t = forward(model(), noise(model().input_shape, 7));
  for (auto _ : state) benchmark::DoNotOptimize(fullgrad(model(), t, 0));
}
BENCHMARK(BM_FullGrad);

void BM_MapSimilarity(benchmark::State& state) {
  const Tensor a = noise({32, 32}, 8), b = noise({32, 32}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(map_similarity(a, b));
}
BENCHMARK(BM_MapSimilarity);

}  // namespace
BENCHMARK_MAIN();
