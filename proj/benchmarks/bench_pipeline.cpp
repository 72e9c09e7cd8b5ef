#include <benchmark/benchmark.h>

#include "fatseg/net.hpp"
#include "fatseg/phantom.hpp"
#include "fatseg/pipeline.hpp"

namespace {

using namespace fatseg;

void BM_PhantomGenerate(benchmark::State& state) {
    PhantomParams params;
    params.dims = {12, 64, 64};
    std::uint64_t seed = 0;
    for (auto _ : state) {
        params.seed = seed++;
        auto ph = generate_phantom(params);
        benchmark::DoNotOptimize(ph.labels.labels.data());
    }
}
BENCHMARK(BM_PhantomGenerate);

void BM_UNetForward64(benchmark::State& state) {
    Rng rng(11);
    UNetSpec spec;
    spec.base_channels = state.range(0);
    auto net = build_unet<float>(spec, rng);
    Tensor<float> x({1, 3, 64, 64});
    for (auto& v : x.data()) v = float(rng.uniform());
    for (auto _ : state) {
        auto y = net->forward(x, {});
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_UNetForward64)->Arg(8)->Arg(16);

void BM_VNetForward(benchmark::State& state) {
    Rng rng(13);
    VNetSpec spec;
    spec.base_channels = state.range(0);
    auto net = build_vnet<float>(spec, rng);
    Tensor<float> x({1, 3, 24, 64, 64});
    for (auto& v : x.data()) v = float(rng.uniform());
    for (auto _ : state) {
        auto y = net->forward(x, {});
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_VNetForward)->Arg(2)->Arg(4);

void BM_PredictMask(benchmark::State& state) {
    Rng rng(17);
    UNetSpec spec;
    spec.base_channels = 8;
    auto net = build_unet<float>(spec, rng);
    PhantomParams params;
    params.dims = {12, 64, 64};
    params.seed = 3;
    const Phantom ph = generate_phantom(params);
    PrepareOptions opts;
    const PreparedScan scan = prepare_volume(ph.volume, &ph.labels, &ph.body_mask, opts);
    for (auto _ : state) {
        auto mask = predict_mask(*net, scan, false);
        benchmark::DoNotOptimize(mask.labels.data());
    }
}
BENCHMARK(BM_PredictMask);

}  // namespace

BENCHMARK_MAIN();
