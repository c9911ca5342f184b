// Parallel kernels against their serial reference versions.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nmt/kernels.hpp"

namespace {

using nmt::Real;
namespace k = nmt::kernels;

std::vector<Real> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<Real> c(n * n);
  for (auto _ : state) {
    Kernel(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <auto Kernel>
void BM_layer_norm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 512;
  auto x = random_vector(rows * d, 3);
  std::vector<Real> gain(d, 1), bias(d, 0), y(rows * d), mean(rows), rstd(rows);
  for (auto _ : state) {
    Kernel(rows, d, x.data(), gain.data(), bias.data(), Real(1e-6), y.data(), mean.data(),
           rstd.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Kernel>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 512;
  auto x = random_vector(rows * n, 4);
  std::vector<Real> y(rows * n);
  for (auto _ : state) {
    Kernel(rows, n, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Kernel>
void BM_gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_vector(n, 5);
  std::vector<Real> y(n);
  for (auto _ : state) {
    Kernel(n, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<k::matmul_nn>)->Name("matmul_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<k::reference::matmul_nn>)->Name("matmul_nn/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<k::matmul_nt>)->Name("matmul_nt/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<k::reference::matmul_nt>)->Name("matmul_nt/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<k::matmul_tn>)->Name("matmul_tn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<k::reference::matmul_tn>)->Name("matmul_tn/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_layer_norm<k::layer_norm_forward>)->Name("layer_norm/parallel")->Arg(256);
BENCHMARK(BM_layer_norm<k::reference::layer_norm_forward>)->Name("layer_norm/reference")->Arg(256);
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax/parallel")->Arg(256);
BENCHMARK(BM_softmax<k::reference::softmax_rows>)->Name("softmax/reference")->Arg(256);
BENCHMARK(BM_gelu<k::gelu_forward>)->Name("gelu/parallel")->Arg(1 << 16);
BENCHMARK(BM_gelu<k::reference::gelu_forward>)->Name("gelu/reference")->Arg(1 << 16);

BENCHMARK_MAIN();
