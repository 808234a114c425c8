// Serial reference kernels against their OpenMP drivers. Run with
// OMP_NUM_THREADS set to the core count to see the parallel speedup; with one
// thread the two should be within noise of each other.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmkd/kernels.hpp"

namespace k = mmkd::kernels;
using mmkd::Real;

namespace {

std::vector<Real> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Attention-score shaped product: [batch*heads, T, dk] x [.., T, dk]^T.
template <void (*Gemm)(const k::GemmDesc&, const Real*, const Real*, Real*)>
void BM_Gemm(benchmark::State& state) {
  k::GemmDesc d;
  d.batch = static_cast<std::size_t>(state.range(0));
  d.m = d.n = static_cast<std::size_t>(state.range(1));
  d.k = 16;
  d.trans_b = true;
  const auto a = random_vector(d.batch * d.m * d.k, 1);
  const auto b = random_vector(d.batch * d.n * d.k, 2);
  std::vector<Real> c(d.batch * d.m * d.n);
  for (auto _ : state) {
    Gemm(d, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d.batch * d.m * d.n * d.k));
}

template <void (*Softmax)(std::size_t, std::size_t, Real, const Real*, Real*)>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 24;
  const auto x = random_vector(rows * cols, 3);
  std::vector<Real> y(x.size());
  for (auto _ : state) {
    Softmax(rows, cols, Real(1), x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <void (*Norm)(std::size_t, std::size_t, Real, const Real*, const Real*, const Real*, Real*, Real*, Real*)>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 32;
  const auto x = random_vector(rows * cols, 4);
  const std::vector<Real> gamma(cols, Real(1)), beta(cols, Real(0));
  std::vector<Real> y(x.size()), mean(rows), rstd(rows);
  for (auto _ : state) {
    Norm(rows, cols, Real(1e-5), x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<k::serial::gemm>)->Name("gemm/serial")->Args({256, 24})->Args({1024, 24});
BENCHMARK(BM_Gemm<k::omp::gemm>)->Name("gemm/omp")->Args({256, 24})->Args({1024, 24});
BENCHMARK(BM_Softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_Softmax<k::omp::softmax_rows>)->Name("softmax/omp")->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_LayerNorm<k::serial::layer_norm>)->Name("layer_norm/serial")->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_LayerNorm<k::omp::layer_norm>)->Name("layer_norm/omp")->Arg(1 << 12)->Arg(1 << 15);

BENCHMARK_MAIN();
