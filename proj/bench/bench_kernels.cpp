// Parallel kernels vs the serial reference loops they are tested against.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "mpcn/kernels.hpp"
#include "mpcn/layers.hpp"

namespace {

std::vector<float> random_floats(std::size_t n) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void set_flops(benchmark::State& state, double flops) {
  state.counters["FLOPS"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_GemmKernel(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto a = random_floats(static_cast<std::size_t>(n) * n), b = a;
  std::vector<float> c(a.size());
  for (auto _ : state) {
    mpcn::kernels::gemm<float>(false, false, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, 2.0 * n * n * n);
}
BENCHMARK(BM_GemmKernel)->Arg(64)->Arg(256)->Arg(512);

void BM_GemmReference(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  auto a = random_floats(static_cast<std::size_t>(n) * n), b = a;
  std::vector<float> c(a.size());
  for (auto _ : state) {
    mpcn::reference::gemm<float>(false, false, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  set_flops(state, 2.0 * n * n * n);
}
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256);

// First shape-encoder stage at 32^3: 5^3 kernel, stride 2, 1 -> 8 channels.
void BM_Conv3dKernel(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  mpcn::Conv<float> conv("bench", 3, 1, 8, 5, 2, 2);
  std::mt19937_64 rng(1);
  conv.init(rng);
  mpcn::Tensor<float> x({batch, 1, 32, 32, 32}, random_floats(static_cast<std::size_t>(batch) * 32768));
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x).data());
  set_flops(state, 2.0 * batch * 4096 * 125 * 8);
}
BENCHMARK(BM_Conv3dKernel)->Arg(1)->Arg(16);

void BM_Conv3dReference(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto g = mpcn::window3d(1, 32, 5, 2, 2);
  auto x = random_floats(static_cast<std::size_t>(batch) * 32768);
  auto w = random_floats(8 * 125);
  std::vector<float> y(static_cast<std::size_t>(8) * g.out_volume());
  for (auto _ : state)
    for (int b = 0; b < batch; ++b) {
      mpcn::reference::conv_forward<float>(g, 8, x.data() + static_cast<std::size_t>(b) * 32768, w.data(), nullptr,
                                           y.data());
      benchmark::DoNotOptimize(y.data());
    }
  set_flops(state, 2.0 * batch * 4096 * 125 * 8);
}
BENCHMARK(BM_Conv3dReference)->Arg(1);

// Last decoder stage: 16^3 -> 32^3, 8 -> 1 channels.
void BM_ConvTransposeKernel(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  mpcn::ConvTranspose3d<float> deconv("bench", 8, 1, 4, 2, 1);
  std::mt19937_64 rng(1);
  deconv.init(rng);
  mpcn::Tensor<float> x({batch, 8, 16, 16, 16}, random_floats(static_cast<std::size_t>(batch) * 8 * 4096));
  for (auto _ : state) benchmark::DoNotOptimize(deconv.forward(x).data());
  set_flops(state, 2.0 * batch * 4096 * 8 * 64);
}
BENCHMARK(BM_ConvTransposeKernel)->Arg(16);

void BM_ConvTransposeReference(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto g = mpcn::window3d(1, 32, 4, 2, 1);
  auto x = random_floats(static_cast<std::size_t>(batch) * 8 * 4096);
  auto w = random_floats(8 * 64);
  std::vector<float> y(32768);
  for (auto _ : state)
    for (int b = 0; b < batch; ++b) {
      mpcn::reference::conv_transpose_forward<float>(g, 8, x.data() + static_cast<std::size_t>(b) * 8 * 4096, w.data(),
                                                     nullptr, y.data());
      benchmark::DoNotOptimize(y.data());
    }
  set_flops(state, 2.0 * batch * 4096 * 8 * 64);
}
BENCHMARK(BM_ConvTransposeReference)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
