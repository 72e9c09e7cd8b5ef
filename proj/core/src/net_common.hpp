#pragma once

#include <cmath>
#include <cstdint>

#include "fatseg/net.hpp"

namespace fatseg::detail {

// Weights ~ N(0, 1/fan_in), biases zero.
template <typename T>
Tensor<T> gaussian_init(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
    Tensor<T> t(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
void trace_put(const ForwardOptions<T>& opts, const std::string& name, const Tensor<T>& t) {
    if (opts.trace)
        opts.trace->entries.push_back({name, t.shape(), static_cast<double>(pairwise_sum<T>(t.data()))});
}

}  // namespace fatseg::detail
