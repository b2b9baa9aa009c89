// Serial reference kernels against the OpenMP/FMA kernels on the shapes the
// model actually runs: the encoder stages of a 64-segment batch and the
// dense heads.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sohnet/kernels.hpp"

namespace {

using namespace sohnet::kernels;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

// (in_channels, in_w, out_channels) of the default encoder stack.
ConvGeometry encoder_stage(int stage) {
    static constexpr std::size_t kIn[] = {1, 8, 16, 32, 64};
    static constexpr std::size_t kW[] = {128, 64, 32, 16, 8};
    static constexpr std::size_t kOut[] = {8, 16, 32, 64, 64};
    ConvGeometry g;
    g.batch = 64;
    g.in_channels = kIn[stage];
    g.in_h = 2;
    g.in_w = kW[stage];
    g.out_channels = kOut[stage];
    g.kernel_w = 5;
    g.stride_w = 2;
    g.pad_w = 2;
    return g;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto k = static_cast<std::size_t>(state.range(2));
    const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::gemm(m, n, k, a.data(), b.data(), c.data());
        else
            reference::gemm(m, n, k, a.data(), b.data(), c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
}

template <bool Parallel>
void BM_conv_forward(benchmark::State& state) {
    const ConvGeometry g = encoder_stage(static_cast<int>(state.range(0)));
    const auto x = random_vector(g.input_size(), 3), w = random_vector(g.weight_size(), 4);
    const auto bias = random_vector(g.out_channels, 5);
    std::vector<double> y(g.output_size());
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::conv2d_forward(g, x, w, bias, y);
        else
            reference::conv2d_forward(g, x, w, bias, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_conv_backward(benchmark::State& state) {
    const ConvGeometry g = encoder_stage(static_cast<int>(state.range(0)));
    const auto x = random_vector(g.input_size(), 6), w = random_vector(g.weight_size(), 7);
    const auto dy = random_vector(g.output_size(), 8);
    std::vector<double> dx(g.input_size()), dw(g.weight_size()), db(g.out_channels);
    for (auto _ : state) {
        if constexpr (Parallel)
            parallel::conv2d_backward(g, x, w, dy, dx, dw, db);
        else
            reference::conv2d_backward(g, x, w, dy, dx, dw, db);
        benchmark::DoNotOptimize(dw.data());
    }
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
    b->Args({64, 64, 160});   // SOH/Q head hidden layer over a batch
    b->Args({64, 512, 320});  // encoder stage as a patch GEMM
    b->Args({256, 256, 256});
}

void stages(benchmark::internal::Benchmark* b) { b->DenseRange(0, 4); }

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/reference")->Apply(gemm_shapes);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/reference")->Apply(stages);
BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/parallel")->Apply(stages);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/reference")->Apply(stages);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/parallel")->Apply(stages);

BENCHMARK_MAIN();
