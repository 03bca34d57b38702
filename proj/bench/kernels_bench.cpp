// Serial reference vs OpenMP kernels at the shapes the tiny and base
// presets produce (rows = batch * positions).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "clops/kernels.hpp"

namespace {

std::vector<float> random_values(std::size_t n) {
    std::mt19937 gen(42);
    std::normal_distribution<float> dist;
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto k = static_cast<std::size_t>(state.range(2));
    const auto a = random_values(m * k);
    const auto b = random_values(k * n);
    std::vector<float> c(m * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            clops::kernels::parallel::gemm_nn<float>(m, n, k, a, b, c, false);
        else
            clops::kernels::serial::gemm_nn<float>(m, n, k, a, b, c, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOP/s"] =
        benchmark::Counter(2.0 * double(m * n * k) * double(state.iterations()), benchmark::Counter::kIsRate,
                           benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto cols = static_cast<std::size_t>(state.range(1));
    const auto x = random_values(rows * cols);
    std::vector<float> y(rows * cols);
    for (auto _ : state) {
        if constexpr (Parallel)
            clops::kernels::parallel::softmax_rows<float>(rows, cols, x, y);
        else
            clops::kernels::serial::softmax_rows<float>(rows, cols, x, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto cols = static_cast<std::size_t>(state.range(1));
    const auto x = random_values(rows * cols);
    const std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
    std::vector<float> y(rows * cols), mean(rows), rstd(rows);
    for (auto _ : state) {
        if constexpr (Parallel)
            clops::kernels::parallel::layer_norm_rows<float>(rows, cols, x, gain, bias, 1e-5f, y, mean, rstd);
        else
            clops::kernels::serial::layer_norm_rows<float>(rows, cols, x, gain, bias, 1e-5f, y, mean, rstd);
        benchmark::DoNotOptimize(y.data());
    }
}

#define GEMM_SHAPES ->Args({3840, 64, 64})->Args({3840, 256, 64})->Args({3840, 64, 256})->Args({1056, 384, 384})
BENCHMARK(BM_Gemm<false>) GEMM_SHAPES;
BENCHMARK(BM_Gemm<true>) GEMM_SHAPES;
BENCHMARK(BM_Softmax<false>)->Args({15360, 120});
BENCHMARK(BM_Softmax<true>)->Args({15360, 120});
BENCHMARK(BM_LayerNorm<false>)->Args({3840, 64});
BENCHMARK(BM_LayerNorm<true>)->Args({3840, 64});

}  // namespace

BENCHMARK_MAIN();
