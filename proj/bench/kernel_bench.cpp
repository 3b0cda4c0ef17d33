// Serial reference kernels vs the production (OpenMP + Eigen) kernels at the
// layer shapes of the 64-filter codec.
//   kernel_bench --benchmark_filter=conv

#include <benchmark/benchmark.h>

#include "nic/kernels.hpp"
#include "nic/random.hpp"

using namespace nic;

namespace {

Tensor<float> filled(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

constexpr std::size_t kC = 64, kK = 5;

template <bool Reference>
void conv_forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = filled({kC, n, n}, 1), w = filled({kC, kC, kK, kK}, 2, -0.05, 0.05), b = filled({kC}, 3);
  for (auto _ : state) {
    auto y = Reference ? kernels::reference::conv2d(x, w, b, 2) : kernels::conv2d(x, w, b, 2);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kC * kC * kK * kK * n * n / 4));
}

template <bool Reference>
void conv_backward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = filled({kC, n, n}, 1), w = filled({kC, kC, kK, kK}, 2, -0.05, 0.05);
  const auto dy = filled({kC, n / 2, n / 2}, 4);
  for (auto _ : state) {
    auto g = Reference ? kernels::reference::conv2d_backward(x, w, dy, 2) : kernels::conv2d_backward(x, w, dy, 2, true, true);
    benchmark::DoNotOptimize(g.dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * kC * kC * kK * kK * n * n / 4));
}

template <bool Reference>
void tconv_forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = filled({kC, n / 2, n / 2}, 1), w = filled({kC, kC, kK, kK}, 2, -0.05, 0.05), b = filled({kC}, 3);
  for (auto _ : state) {
    auto y = Reference ? kernels::reference::conv2d_transpose(x, w, b, 2) : kernels::conv2d_transpose(x, w, b, 2);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kC * kC * kK * kK * n * n / 4));
}

template <bool Reference>
void gdn_forward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = filled({kC, n, n}, 1), beta = filled({kC}, 2, 0.5, 1.5), gamma = filled({kC, kC}, 3, 0, 0.1);
  for (auto _ : state) {
    auto y = Reference ? kernels::reference::gdn(x, beta, gamma, false) : kernels::gdn(x, beta, gamma, false);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kC * kC * n * n));
}

template <bool Reference>
void gdn_backward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = filled({kC, n, n}, 1), beta = filled({kC}, 2, 0.5, 1.5), gamma = filled({kC, kC}, 3, 0, 0.1);
  const auto dy = filled({kC, n, n}, 4);
  for (auto _ : state) {
    auto g = Reference ? kernels::reference::gdn_backward(x, beta, gamma, dy, false)
                       : kernels::gdn_backward(x, beta, gamma, dy, false);
    benchmark::DoNotOptimize(g.dx.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(3 * kC * kC * n * n));
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/reference")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<false>)->Name("conv_forward/parallel")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->Name("conv_backward/reference")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->Name("conv_backward/parallel")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(tconv_forward<true>)->Name("tconv_forward/reference")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(tconv_forward<false>)->Name("tconv_forward/parallel")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(gdn_forward<true>)->Name("gdn_forward/reference")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(gdn_forward<false>)->Name("gdn_forward/parallel")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(gdn_backward<true>)->Name("gdn_backward/reference")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(gdn_backward<false>)->Name("gdn_backward/parallel")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
