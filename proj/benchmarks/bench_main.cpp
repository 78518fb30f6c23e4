#include <benchmark/benchmark.h>

#include "leafvit/attention.hpp"
#include "leafvit/model.hpp"
#include "leafvit/ops.hpp"
#include "leafvit/rng.hpp"

using namespace leafvit;

namespace {

Tensor noise(const Shape& shape, CounterRng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.mutable_data()) v = float(rng.uniform(-1.0, 1.0));
  return t;
}

// args: channels, spatial size, kernel, groups (0 = depthwise)
void BM_Conv2d(benchmark::State& state) {
  const auto c = std::size_t(state.range(0)), s = std::size_t(state.range(1)), k = std::size_t(state.range(2));
  const std::size_t g = state.range(3) == 0 ? c : std::size_t(state.range(3));
  CounterRng rng(1);
  const auto x = noise({1, c, s, s}, rng), w = noise({c, c / g, k, k}, rng), b = noise({c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, Conv2dParams{1, k / 2, g}));
  state.counters["MACs"] = double(c * (c / g) * k * k * s * s);
}
BENCHMARK(BM_Conv2d)->Args({32, 56, 1, 1})->Args({64, 28, 3, 1})->Args({128, 28, 3, 0})->Args({256, 7, 1, 1});

void BM_Matmul(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  CounterRng rng(2);
  const auto a = noise({n, n}, rng), b = noise({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(64, 512);

// tokens k at width 64; time should grow linearly in k
void BM_SeparableAttention(benchmark::State& state) {
  const auto k = std::size_t(state.range(0)), d = std::size_t(64);
  CounterRng rng(3);
  const SeparableAttentionWeights<float> w{noise({d, 1}, rng), noise({1}, rng), noise({d, d}, rng), noise({d}, rng),
                                           noise({d, d}, rng), noise({d}, rng), noise({d, d}, rng), noise({d}, rng)};
  const auto x = noise({4, k, d}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(separable_self_attention(x, w));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SeparableAttention)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oN);

void BM_ModelForward(benchmark::State& state, Architecture arch) {
  const auto model = build_model(arch, 10);
  CounterRng rng(4);
  const std::size_t s = model.input_size();
  const auto x = noise({1, 3, s, s}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
  state.counters["FPS"] = benchmark::Counter(double(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK_CAPTURE(BM_ModelForward, mobilevitv2_050, Architecture::mobilevitv2_050)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ModelForward, baseline_cnn, Architecture::baseline_cnn)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
