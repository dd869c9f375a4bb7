// Serial reference vs OpenMP kernels at the shapes of one desk training step.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ccrl/kernels.hpp"

namespace k = ccrl::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

// Conv as GEMM: weights (out × patch) times columns (patch × locations).
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const std::size_t m = state.range(0), kk = state.range(1), n = state.range(2);
  const auto a = random_vector(m * kk, 1), b = random_vector(kk * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm<float>(k::Trans::no, k::Trans::no, m, n, kk, a, b, c);
    else
      k::serial::gemm<float>(k::Trans::no, k::Trans::no, m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * m * n * kk);
}

template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  k::ConvGeometry g{static_cast<std::size_t>(state.range(0)), 16, 16, 16, 3, 3, 1, 1};
  const auto x = random_vector(g.batch * g.channels * g.height * g.width, 3);
  std::vector<float> col(g.patch() * g.locations());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::im2col<float>(g, x, col);
    else
      k::serial::im2col<float>(g, x, col);
    benchmark::DoNotOptimize(col.data());
  }
}

template <bool Parallel>
void BM_GroupNorm(benchmark::State& state) {
  k::GroupNormShape s{static_cast<std::size_t>(state.range(0)), 32, 64, 8};
  const std::size_t n = s.batch * s.channels * s.spatial;
  const auto x = random_vector(n, 4), gamma = random_vector(s.channels, 5), beta = random_vector(s.channels, 6);
  std::vector<float> y(n), xhat(n), rstd(s.batch * s.groups);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::group_norm_forward<float>(s, x, gamma, beta, 1e-5f, y, xhat, rstd);
    else
      k::serial::group_norm_forward<float>(s, x, gamma, beta, 1e-5f, y, xhat, rstd);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Args({16, 144, 32768})->Args({64, 288, 2048})->Args({128, 512, 128});
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Args({16, 144, 32768})->Args({64, 288, 2048})->Args({128, 512, 128});
BENCHMARK(BM_Im2col<false>)->Name("im2col/serial")->Arg(128);
BENCHMARK(BM_Im2col<true>)->Name("im2col/parallel")->Arg(128);
BENCHMARK(BM_GroupNorm<false>)->Name("group_norm/serial")->Arg(128);
BENCHMARK(BM_GroupNorm<true>)->Name("group_norm/parallel")->Arg(128);

BENCHMARK_MAIN();
