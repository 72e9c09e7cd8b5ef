#pragma once

// Finite-difference suite shared by the unit tests and the acceptance gate:
// every differentiable primitive, randomized small shapes, float64, central
// differences with relative error measured against max(1, |numeric|).

#include <string>
#include <vector>

#include "fatseg/loss.hpp"
#include "fatseg/ops.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradSuiteEntry {
    std::string op;
    double max_err = 0.0;
};

inline std::vector<GradSuiteEntry> run_gradient_suite(int shapes_per_op, std::uint64_t seed) {
    using namespace fatseg;
    Rng rng(seed);
    std::vector<GradSuiteEntry> results;

    auto record = [&](const std::string& op, double err) {
        for (auto& r : results)
            if (r.op == op) {
                r.max_err = std::max(r.max_err, err);
                return;
            }
        results.push_back({op, err});
    };

    for (int trial = 0; trial < shapes_per_op; ++trial) {
        const std::int64_t N = 1 + rng.uniform_int(0, 1);
        const std::int64_t C = 1 + rng.uniform_int(0, 2);
        const std::int64_t K = 1 + rng.uniform_int(0, 2);

        {  // conv 2D with random per-axis strides and padding
            const Dims st{1 + rng.uniform_int(0, 1), 1 + rng.uniform_int(0, 1)};
            const Dims pad{rng.uniform_int(0, 1), rng.uniform_int(0, 1)};
            auto x = random_tensor<double>({N, C, 5 + rng.uniform_int(0, 2), 5 + rng.uniform_int(0, 2)}, rng);
            auto w = random_tensor<double>({K, C, 3, 3}, rng, -0.7, 0.7);
            auto b = random_tensor<double>({K}, rng);
            record("conv2d", grad_check({&x, &w, &b},
                                        [&](Tape<double>* t) { return conv<double>(t, x, w, b, st, pad); }, rng));
        }
        {  // conv 3D, anisotropic strides
            const Dims st{1 + rng.uniform_int(0, 1), 1 + rng.uniform_int(0, 1), 1 + rng.uniform_int(0, 1)};
            const Dims pad{rng.uniform_int(0, 1), rng.uniform_int(0, 1), rng.uniform_int(0, 1)};
            auto x = random_tensor<double>({1, C, 4, 4 + rng.uniform_int(0, 1), 4}, rng);
            auto w = random_tensor<double>({K, C, 2, 2, 2}, rng, -0.7, 0.7);
            auto b = random_tensor<double>({K}, rng);
            record("conv3d", grad_check({&x, &w, &b},
                                        [&](Tape<double>* t) { return conv<double>(t, x, w, b, st, pad); }, rng));
        }
        {  // transposed conv 2D
            const Dims st{1 + rng.uniform_int(0, 1), 1 + rng.uniform_int(0, 1)};
            auto x = random_tensor<double>({N, C, 3, 4}, rng);
            auto w = random_tensor<double>({C, K, 2, 2}, rng, -0.7, 0.7);
            auto b = random_tensor<double>({K}, rng);
            record("transposed_conv2d",
                   grad_check({&x, &w, &b},
                              [&](Tape<double>* t) { return transposed_conv<double>(t, x, w, b, st); }, rng));
        }
        {  // transposed conv 3D, anisotropic strides
            const Dims st{1 + rng.uniform_int(0, 1), 2, 1 + rng.uniform_int(0, 1)};
            auto x = random_tensor<double>({1, C, 3, 3, 3}, rng);
            auto w = random_tensor<double>({C, K, 2, 2, 2}, rng, -0.7, 0.7);
            auto b = random_tensor<double>({K}, rng);
            record("transposed_conv3d",
                   grad_check({&x, &w, &b},
                              [&](Tape<double>* t) { return transposed_conv<double>(t, x, w, b, st); }, rng));
        }
        {  // max pool 2D and 3D
            auto x = random_tensor<double>({N, C, 6, 6}, rng, -3.0, 3.0);
            record("max_pool2d",
                   grad_check({&x}, [&](Tape<double>* t) { return max_pool<double>(t, x, {2, 2}, {2, 2}); }, rng));
            auto v = random_tensor<double>({1, C, 4, 4, 4}, rng, -3.0, 3.0);
            record("max_pool3d", grad_check(
                                     {&v},
                                     [&](Tape<double>* t) { return max_pool<double>(t, v, {1, 2, 2}, {1, 2, 2}); },
                                     rng));
        }
        {  // batch norm, train and eval modes
            auto x = random_tensor<double>({2, C, 3, 3}, rng);
            auto gamma = random_tensor<double>({C}, rng, 0.5, 1.5);
            auto beta = random_tensor<double>({C}, rng);
            auto rm = Tensor<double>({C});
            auto rv = Tensor<double>::full({C}, 1.0);
            record("batch_norm_train",
                   grad_check({&x, &gamma, &beta},
                              [&](Tape<double>* t) {
                                  auto rm2 = rm.clone();
                                  auto rv2 = rv.clone();
                                  return batch_norm<double>(t, x, gamma, beta, rm2, rv2, Mode::Train, 0.1, 1e-5);
                              },
                              rng));
            auto rme = random_tensor<double>({C}, rng, -0.5, 0.5);
            auto rve = random_tensor<double>({C}, rng, 0.5, 2.0);
            record("batch_norm_eval",
                   grad_check({&x, &gamma, &beta},
                              [&](Tape<double>* t) {
                                  return batch_norm<double>(t, x, gamma, beta, rme, rve, Mode::Eval, 0.1, 1e-5);
                              },
                              rng));
        }
        {  // activations
            auto x = random_tensor<double>({N, C, 4, 4}, rng);
            avoid_zero(x);
            record("relu", grad_check({&x}, [&](Tape<double>* t) { return relu<double>(t, x); }, rng));
            auto slope = random_tensor<double>({C}, rng, 0.1, 0.5);
            record("prelu",
                   grad_check({&x, &slope}, [&](Tape<double>* t) { return prelu<double>(t, x, slope); }, rng));
            auto s = random_tensor<double>({N, 3, 2, 2}, rng, -2.0, 2.0);
            record("softmax", grad_check({&s}, [&](Tape<double>* t) { return softmax<double>(t, s, 1); }, rng));
        }
        {  // structure ops
            auto a = random_tensor<double>({N, C, 3, 3}, rng);
            auto b = random_tensor<double>({N, C, 3, 3}, rng);
            record("concat",
                   grad_check({&a, &b}, [&](Tape<double>* t) { return concat<double>(t, a, b, 1); }, rng));
            record("add", grad_check({&a, &b}, [&](Tape<double>* t) { return add<double>(t, a, b); }, rng));
            record("mul", grad_check({&a, &b}, [&](Tape<double>* t) { return mul<double>(t, a, b); }, rng));
        }
        {  // dropout with a pinned mask
            auto x = random_tensor<double>({3, 4}, rng);
            const std::uint64_t mask_seed = rng.next_u64();
            record("dropout", grad_check(
                                  {&x},
                                  [&](Tape<double>* t) {
                                      Rng mask_rng(mask_seed);
                                      return dropout<double>(t, x, 0.4, Mode::Train, mask_rng);
                                  },
                                  rng));
        }
        {  // cross-entropy loss w.r.t. scores
            const std::int64_t sp = 2 + rng.uniform_int(0, 2);
            auto s = random_tensor<double>({1, 3, sp, sp}, rng, -2.0, 2.0);
            std::vector<std::uint8_t> target(static_cast<std::size_t>(sp * sp));
            for (auto& y : target) y = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
            record("cross_entropy_loss",
                   grad_check({&s},
                              [&](Tape<double>* t) { return cross_entropy_loss<double>(t, s, target, {}); }, rng));
        }
        {  // soft dice loss chained through softmax
            const std::int64_t sp = 3;
            auto s = random_tensor<double>({1, 3, sp, sp}, rng, -2.0, 2.0);
            std::vector<std::uint8_t> target(static_cast<std::size_t>(sp * sp));
            for (auto& y : target) y = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
            record("dice_loss", grad_check(
                                    {&s},
                                    [&](Tape<double>* t) {
                                        auto p = softmax<double>(t, s, 1);
                                        return dice_loss<double>(t, p, target, {0.1, false});
                                    },
                                    rng));
        }
    }
    return results;
}

}  // namespace oracle
