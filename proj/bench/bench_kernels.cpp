// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "r2seg/kernels.hpp"
#include "r2seg/nnops.hpp"
#include "r2seg/tensor.hpp"

namespace {

using namespace r2seg;

void BM_GemmParallel(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const Tensor4 a = uniform(Shape4{1, 1, n, n}, -1, 1, 1);
  const Tensor4 b = uniform(Shape4{1, 1, n, n}, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::gemm_nn(n, n, n, a.data(), b.data(), c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(128)->Arg(256);

void BM_GemmSerial(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const Tensor4 a = uniform(Shape4{1, 1, n, n}, -1, 1, 1);
  const Tensor4 b = uniform(Shape4{1, 1, n, n}, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    kernels::serial::gemm_nn(n, n, n, a.data(), b.data(), c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}
BENCHMARK(BM_GemmSerial)->Arg(64)->Arg(128)->Arg(256);

void BM_ConvIm2col(benchmark::State& state) {
  const auto s = std::size_t(state.range(0));
  const Tensor4 x = uniform(Shape4{4, 16, s, s}, -1, 1, 3);
  const Tensor4 w = he_init(Shape4{16, 16, 3, 3}, 144, 4);
  const Tensor4 b(Shape4{1, 16, 1, 1}, 0.0);
  for (auto _ : state) {
    Tensor4 y = conv2d(x, w, b);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_ConvIm2col)->Arg(32)->Arg(64);

void BM_ConvDirect(benchmark::State& state) {
  const auto s = std::size_t(state.range(0));
  const Tensor4 x = uniform(Shape4{4, 16, s, s}, -1, 1, 3);
  const Tensor4 w = he_init(Shape4{16, 16, 3, 3}, 144, 4);
  const std::vector<double> b(16, 0.0);
  for (auto _ : state) {
    Tensor4 y = kernels::serial::conv2d_direct(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_ConvDirect)->Arg(32)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
