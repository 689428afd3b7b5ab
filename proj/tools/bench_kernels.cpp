// Serial reference vs OpenMP kernels on shapes the network actually runs.
#include <benchmark/benchmark.h>

#include "fcbnet/kernels.hpp"
#include "fcbnet/rng.hpp"

using fcbnet::NormStats;
using fcbnet::Rng;
using fcbnet::Tensor;

namespace {

Tensor randn(Rng& rng, std::vector<int64_t> shape) {
    Tensor t(std::move(shape));
    rng.fill_normal(t, 0.0f, 1.0f);
    return t;
}

template <Tensor (*F)(const Tensor&, const Tensor&, const Tensor*)>
void bm_pointwise(benchmark::State& state) {
    Rng rng(1);
    const Tensor x = randn(rng, {1, 256, 64, 64});
    const Tensor w = randn(rng, {64, 256});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, w, nullptr));
}

template <Tensor (*F)(const Tensor&, const Tensor&)>
void bm_conv3x3(benchmark::State& state) {
    Rng rng(2);
    const Tensor x = randn(rng, {1, 128, 64, 64});
    const Tensor w = randn(rng, {128, 128, 3, 3});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, w));
}

template <Tensor (*F)(const Tensor&, const Tensor&, const Tensor*)>
void bm_depthwise7(benchmark::State& state) {
    Rng rng(3);
    const Tensor x = randn(rng, {1, 256, 64, 64});
    const Tensor w = randn(rng, {256, 1, 7, 7});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, w, nullptr));
}

template <Tensor (*F)(const Tensor&, const Tensor&, const Tensor*, int, int)>
void bm_stem(benchmark::State& state) {
    Rng rng(4);
    const Tensor x = randn(rng, {1, 3, 512, 512});
    const Tensor w = randn(rng, {96, 3, 4, 4});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, w, nullptr, 4, 0));
}

template <Tensor (*F)(const Tensor&, int64_t, int64_t)>
void bm_bilinear_up(benchmark::State& state) {
    Rng rng(5);
    const Tensor x = randn(rng, {1, 128, 64, 64});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, 128, 128));
}

template <Tensor (*F)(const Tensor&)>
void bm_gelu(benchmark::State& state) {
    Rng rng(6);
    const Tensor x = randn(rng, {1, 256, 128, 128});
    for (auto _ : state) benchmark::DoNotOptimize(F(x));
}

template <Tensor (*F)(const Tensor&, const Tensor&, const Tensor&, int, float, NormStats*)>
void bm_group_norm(benchmark::State& state) {
    Rng rng(7);
    const Tensor x = randn(rng, {2, 256, 64, 64});
    const Tensor gamma = randn(rng, {256});
    const Tensor beta = randn(rng, {256});
    for (auto _ : state) benchmark::DoNotOptimize(F(x, gamma, beta, 32, 1e-5f, nullptr));
}

}  // namespace

BENCHMARK_TEMPLATE(bm_pointwise, fcbnet::serial::pointwise_conv)->Name("pointwise_256_64/serial");
BENCHMARK_TEMPLATE(bm_pointwise, fcbnet::kern::pointwise_conv)->Name("pointwise_256_64/omp");
BENCHMARK_TEMPLATE(bm_conv3x3, fcbnet::serial::conv3x3_same)->Name("conv3x3_128/serial");
BENCHMARK_TEMPLATE(bm_conv3x3, fcbnet::kern::conv3x3_same)->Name("conv3x3_128/omp");
BENCHMARK_TEMPLATE(bm_depthwise7, fcbnet::serial::depthwise_conv_same)->Name("depthwise7_256/serial");
BENCHMARK_TEMPLATE(bm_depthwise7, fcbnet::kern::depthwise_conv_same)->Name("depthwise7_256/omp");
BENCHMARK_TEMPLATE(bm_stem, fcbnet::serial::conv2d)->Name("stem4x4_512/serial");
BENCHMARK_TEMPLATE(bm_stem, fcbnet::kern::conv2d)->Name("stem4x4_512/omp");
BENCHMARK_TEMPLATE(bm_bilinear_up, fcbnet::serial::bilinear_resize)->Name("bilinear_up_2x/serial");
BENCHMARK_TEMPLATE(bm_bilinear_up, fcbnet::kern::bilinear_resize)->Name("bilinear_up_2x/omp");
BENCHMARK_TEMPLATE(bm_gelu, fcbnet::serial::gelu)->Name("gelu_4m/serial");
BENCHMARK_TEMPLATE(bm_gelu, fcbnet::kern::gelu)->Name("gelu_4m/omp");
BENCHMARK_TEMPLATE(bm_group_norm, fcbnet::serial::group_norm)->Name("group_norm_256/serial");
BENCHMARK_TEMPLATE(bm_group_norm, fcbnet::kern::group_norm)->Name("group_norm_256/omp");

BENCHMARK_MAIN();
