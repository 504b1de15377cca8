// Parallel kernels against their serial reference twins. Sizes are decoder-ish
// feature maps at desk scale; set OMP_NUM_THREADS to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lesion/kernels.hpp"
#include "lesion/reference.hpp"

using namespace lesion;

namespace {

Tensor random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

std::vector<double> random_weights(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  std::vector<double> w(n);
  for (double& v : w) v = u(rng);
  return w;
}

ConvGeometry conv_geom(int channels, int stride) {
  ConvGeometry g;
  g.kernel = 3;
  g.stride = stride;
  g.in_channels = channels;
  g.out_channels = channels;
  return g;
}

template <bool Parallel>
void BM_Conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const ConvGeometry g = conv_geom(ch, 1);
  const Tensor x = random_input(Shape{1, size, size, ch}, 1);
  const auto w = random_weights(g.weight_count(), 2);
  const std::vector<double> b(static_cast<std::size_t>(ch), 0.0);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::conv2d(x, w, b, g) : reference::conv2d(x, w, b, g);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(size) * size * ch * ch * 9);
}

template <bool Parallel>
void BM_Conv2dGradInput(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const ConvGeometry g = conv_geom(ch, 1);
  const Shape in{1, size, size, ch};
  const Tensor dy = random_input(g.output_shape(in), 3);
  const auto w = random_weights(g.weight_count(), 4);
  for (auto _ : state) {
    Tensor dx = Parallel ? kernels::conv2d_grad_input(dy, w, g, in) : reference::conv2d_grad_input(dy, w, g, in);
    benchmark::DoNotOptimize(dx.values().data());
  }
}

template <bool Parallel>
void BM_DepthwiseConv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const ConvGeometry g = conv_geom(ch, 1);
  const Tensor x = random_input(Shape{1, size, size, ch}, 5);
  const auto w = random_weights(g.depthwise_weight_count(), 6);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::depthwise_conv2d(x, w, g) : reference::depthwise_conv2d(x, w, g);
    benchmark::DoNotOptimize(y.values().data());
  }
}

template <bool Parallel>
void BM_Upsample2x(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const Tensor x = random_input(Shape{1, size, size, ch}, 7);
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::upsample2x(x) : reference::upsample2x(x);
    benchmark::DoNotOptimize(y.values().data());
  }
}

void sizes(benchmark::internal::Benchmark* b) {
  b->Args({32, 16})->Args({64, 32})->Args({128, 32})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Conv2d<true>)->Apply(sizes);
BENCHMARK(BM_Conv2d<false>)->Apply(sizes);
BENCHMARK(BM_Conv2dGradInput<true>)->Apply(sizes);
BENCHMARK(BM_Conv2dGradInput<false>)->Apply(sizes);
BENCHMARK(BM_DepthwiseConv2d<true>)->Apply(sizes);
BENCHMARK(BM_DepthwiseConv2d<false>)->Apply(sizes);
BENCHMARK(BM_Upsample2x<true>)->Apply(sizes);
BENCHMARK(BM_Upsample2x<false>)->Apply(sizes);

BENCHMARK_MAIN();
