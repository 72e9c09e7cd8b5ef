#include <doctest.h>

#include <cmath>

#include "fatseg/loss.hpp"
#include "oracles.hpp"

using namespace fatseg;

TEST_CASE("cross entropy: uniform scores give ln 3") {
    auto s = Tensor<double>({1, 3, 2, 2});  // all-equal scores
    const std::vector<std::uint8_t> target(4, 1);
    auto loss = cross_entropy_loss<double>(nullptr, s, target, {});
    CHECK(loss.data()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy: a large margin at the correct class drives the loss to zero") {
    Tensor<double> s({1, 3, 1, 1});
    s.at(0, 0, 0, 0) = 0.0;
    s.at(0, 1, 0, 0) = 50.0;
    s.at(0, 2, 0, 0) = 0.0;
    const std::vector<std::uint8_t> target{1};
    auto loss = cross_entropy_loss<double>(nullptr, s, target, {});
    CHECK(loss.data()[0] < 1e-9);
}

TEST_CASE("cross entropy: matches a per-pixel -log p oracle") {
    Rng rng(101);
    auto s = oracle::random_tensor<double>({1, 3, 2, 5}, rng, -3.0, 3.0);
    std::vector<std::uint8_t> target(10);
    for (auto& y : target) y = static_cast<std::uint8_t>(rng.uniform_int(0, 2));

    double want = 0;
    for (std::int64_t i = 0; i < 10; ++i) {
        double denom = 0;
        for (std::int64_t c = 0; c < 3; ++c) denom += std::exp(s.data()[std::size_t(c * 10 + i)]);
        const double p = std::exp(s.data()[std::size_t(target[std::size_t(i)] * 10 + i)]) / denom;
        want += -std::log(p);
    }
    want /= 10.0;

    auto loss = cross_entropy_loss<double>(nullptr, s, target, {});
    CHECK(std::abs(loss.data()[0] - want) < 1e-6);
}

TEST_CASE("cross entropy: labels outside the class range are rejected") {
    auto s = Tensor<double>({1, 3, 1, 1});
    const std::vector<std::uint8_t> target{3};
    CHECK_THROWS_AS(cross_entropy_loss<double>(nullptr, s, target, {}), std::invalid_argument);
}

TEST_CASE("hard dice: perfect overlap is zero") {
    std::vector<std::uint8_t> x(200, 0), y(200, 0);
    for (std::size_t i = 0; i < 100; ++i) x[i] = y[i] = 1;
    CHECK(hard_dice_loss(x, y, 1, 0.1) == 0.0);
}

TEST_CASE("hard dice: empty-empty is zero through the alpha guard") {
    const std::vector<std::uint8_t> x(50, 0), y(50, 0);
    CHECK(hard_dice_loss(x, y, 1, 0.1) == 0.0);  // 1 - 0.1/0.1
}

TEST_CASE("hard dice: half overlap") {
    // |X| = |Y| = 100, overlap 50 -> 1 - 100.1/200.1
    std::vector<std::uint8_t> x(300, 0), y(300, 0);
    for (std::size_t i = 0; i < 100; ++i) x[i] = 1;
    for (std::size_t i = 50; i < 150; ++i) y[i] = 1;
    CHECK(hard_dice_loss(x, y, 1, 0.1) == doctest::Approx(1.0 - 100.1 / 200.1).epsilon(1e-12));
}

TEST_CASE("hard dice: symmetric and bounded in [0, 1)") {
    Rng rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + std::size_t(rng.uniform_int(0, 63));
        std::vector<std::uint8_t> x(n), y(n);
        for (auto& v : x) v = std::uint8_t(rng.uniform_int(0, 2));
        for (auto& v : y) v = std::uint8_t(rng.uniform_int(0, 2));
        for (std::uint8_t cls : {std::uint8_t(1), std::uint8_t(2)}) {
            const double a = hard_dice_loss(x, y, cls, 0.1);
            const double b = hard_dice_loss(y, x, cls, 0.1);
            CHECK(a == b);
            CHECK(a >= 0.0);
            CHECK(a < 1.0);
            // zero exactly when the class sets coincide
            bool equal_sets = true;
            for (std::size_t i = 0; i < n; ++i)
                if ((x[i] == cls) != (y[i] == cls)) equal_sets = false;
            CHECK((a == 0.0) == equal_sets);
        }
    }
}

TEST_CASE("soft dice: alpha must be positive") {
    auto p = Tensor<double>({1, 3, 2, 2});
    const std::vector<std::uint8_t> target(4, 0);
    CHECK_THROWS_AS(dice_loss<double>(nullptr, p, target, {0.0, false}), std::invalid_argument);
    CHECK_THROWS_AS(dice_loss<double>(nullptr, p, target, {-1.0, false}), std::invalid_argument);
}

TEST_CASE("soft dice: one-hot probabilities reduce to the hard-set loss") {
    Rng rng(105);
    std::vector<std::uint8_t> pred(36), ref(36);
    for (auto& v : pred) v = std::uint8_t(rng.uniform_int(0, 2));
    for (auto& v : ref) v = std::uint8_t(rng.uniform_int(0, 2));

    Tensor<double> p({1, 3, 6, 6});
    for (std::size_t i = 0; i < 36; ++i) p.data()[std::size_t(pred[i]) * 36 + i] = 1.0;

    const double soft = dice_loss<double>(nullptr, p, ref, {0.1, false}).data()[0];
    const double hard = (hard_dice_loss(pred, ref, 1, 0.1) + hard_dice_loss(pred, ref, 2, 0.1)) / 2.0;
    CHECK(soft == doctest::Approx(hard).epsilon(1e-12));
}
