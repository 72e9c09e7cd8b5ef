#include <benchmark/benchmark.h>

#include "fatseg/loss.hpp"
#include "fatseg/ops.hpp"
#include "fatseg/rng.hpp"

namespace {

using namespace fatseg;

template <typename T>
Tensor<T> filled(Shape shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const std::int64_t c = state.range(0), hw = state.range(1);
    Rng rng(1);
    auto x = filled<float>({1, c, hw, hw}, rng);
    auto w = filled<float>({c, c, 3, 3}, rng);
    auto b = filled<float>({c}, rng);
    for (auto _ : state) {
        auto y = conv<float>(nullptr, x, w, b, {1, 1}, {1, 1});
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * hw * hw * c * c * 9);
}
BENCHMARK(BM_Conv2dForward)->Args({8, 64})->Args({16, 64})->Args({16, 128})->Args({64, 64});

void BM_Conv2dTrainStep(benchmark::State& state) {
    const std::int64_t c = state.range(0), hw = state.range(1);
    Rng rng(2);
    auto x = filled<float>({1, c, hw, hw}, rng);
    auto w = filled<float>({c, c, 3, 3}, rng);
    auto b = filled<float>({c}, rng);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    for (auto _ : state) {
        Tape<float> tape;
        auto y = conv<float>(&tape, x, w, b, {1, 1}, {1, 1});
        auto loss = sum_all(&tape, y);
        tape.backward(loss);
        w.zero_grad();
        b.zero_grad();
        benchmark::DoNotOptimize(loss.data().data());
    }
}
BENCHMARK(BM_Conv2dTrainStep)->Args({8, 64})->Args({16, 64});

void BM_Conv3dForward(benchmark::State& state) {
    const std::int64_t c = state.range(0);
    Rng rng(3);
    auto x = filled<float>({1, c, 24, 32, 32}, rng);
    auto w = filled<float>({c, c, 5, 5, 5}, rng);
    auto b = filled<float>({c}, rng);
    for (auto _ : state) {
        auto y = conv<float>(nullptr, x, w, b, {1, 1, 1}, {2, 2, 2});
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Conv3dForward)->Arg(4)->Arg(8);

void BM_MaxPool2d(benchmark::State& state) {
    Rng rng(4);
    auto x = filled<float>({1, 16, 256, 256}, rng);
    for (auto _ : state) {
        auto y = max_pool<float>(nullptr, x, {2, 2}, {2, 2});
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_MaxPool2d);

void BM_BatchNormTrain(benchmark::State& state) {
    Rng rng(5);
    auto x = filled<float>({1, 16, 24, 64, 64}, rng);
    auto gamma = Tensor<float>::full({16}, 1.0f);
    auto beta = Tensor<float>({16});
    auto rm = Tensor<float>({16});
    auto rv = Tensor<float>::full({16}, 1.0f);
    for (auto _ : state) {
        auto y = batch_norm<float>(nullptr, x, gamma, beta, rm, rv, Mode::Train, 0.1, 1e-5);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_BatchNormTrain);

void BM_SoftmaxDiceLoss(benchmark::State& state) {
    Rng rng(6);
    auto scores = filled<float>({1, 3, 24, 64, 64}, rng);
    std::vector<std::uint8_t> target(24 * 64 * 64);
    for (auto& v : target) v = std::uint8_t(rng.uniform_int(0, 2));
    for (auto _ : state) {
        auto p = softmax<float>(nullptr, scores, 1);
        auto l = dice_loss<float>(nullptr, p, target, {0.1, false});
        benchmark::DoNotOptimize(l.data().data());
    }
}
BENCHMARK(BM_SoftmaxDiceLoss);

void BM_CrossEntropyLoss(benchmark::State& state) {
    Rng rng(7);
    auto scores = filled<float>({1, 3, 256, 256}, rng);
    std::vector<std::uint8_t> target(256 * 256);
    for (auto& v : target) v = std::uint8_t(rng.uniform_int(0, 2));
    for (auto _ : state) {
        auto l = cross_entropy_loss<float>(nullptr, scores, target, {});
        benchmark::DoNotOptimize(l.data().data());
    }
}
BENCHMARK(BM_CrossEntropyLoss);

}  // namespace

BENCHMARK_MAIN();
