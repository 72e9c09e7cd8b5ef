#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fatseg {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamSlot {
    std::vector<T> m, v;
};

// Bias-corrected Adam update, in place on param. t is the 1-based step count.
// A NaN gradient aborts the run with the offending parameter path.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot<T>& slot, const AdamConfig& cfg,
                 std::int64_t t, const std::string& path);

extern template void adam_update(std::span<float>, std::span<const float>, AdamSlot<float>&, const AdamConfig&,
                                 std::int64_t, const std::string&);
extern template void adam_update(std::span<double>, std::span<const double>, AdamSlot<double>&, const AdamConfig&,
                                 std::int64_t, const std::string&);

}  // namespace fatseg
