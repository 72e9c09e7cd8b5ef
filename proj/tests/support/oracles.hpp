#pragma once

// Test-only oracles, kept independent of the library's compute paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fatseg/ops.hpp"
#include "fatseg/rng.hpp"
#include "fatseg/tensor.hpp"

namespace oracle {

template <typename T>
fatseg::Tensor<T> random_tensor(fatseg::Shape shape, fatseg::Rng& rng, double lo = -1.0, double hi = 1.0) {
    fatseg::Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Pushes values away from zero so ReLU/PReLU kinks stay clear of the
// finite-difference stencil.
template <typename T>
void avoid_zero(fatseg::Tensor<T>& t, double margin = 1e-2) {
    for (auto& v : t.data())
        if (std::abs(double(v)) < margin) v = v < 0 ? static_cast<T>(-margin) : static_cast<T>(margin);
}

// Central finite-difference gradient check. `op` rebuilds the forward pass
// from the current contents of `inputs` (tape may be null); the check
// projects the output onto a fixed random direction to obtain a scalar.
// Returns the maximum |analytic - numeric| / max(1, |numeric|).
inline double grad_check(std::vector<fatseg::Tensor<double>*> inputs,
                         const std::function<fatseg::Tensor<double>(fatseg::Tape<double>*)>& op, fatseg::Rng& rng,
                         double h = 1e-5) {
    using fatseg::Tape;
    using fatseg::Tensor;

    for (auto* in : inputs) {
        in->set_requires_grad(true);
        in->zero_grad();  // tensors may have been through an earlier check
    }
    Tensor<double> probe = op(nullptr);
    Tensor<double> proj = random_tensor<double>(probe.shape(), rng);

    auto scalar = [&](Tape<double>* tape) {
        Tensor<double> o = op(tape);
        return fatseg::sum_all(tape, fatseg::mul(tape, o, proj));
    };

    Tape<double> tape;
    Tensor<double> loss = scalar(&tape);
    tape.backward(loss);

    double max_err = 0.0;
    for (auto* in : inputs) {
        auto grad = in->grad();
        auto x = in->data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + h;
            const double fp = scalar(nullptr).data()[0];
            x[i] = orig - h;
            const double fm = scalar(nullptr).data()[0];
            x[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Direct sliding-window cross-correlation, nested loops only (2D).
inline fatseg::Tensor<double> conv2d_reference(const fatseg::Tensor<double>& x, const fatseg::Tensor<double>& w,
                                               const fatseg::Tensor<double>& b, std::int64_t sy, std::int64_t sx,
                                               std::int64_t py, std::int64_t px) {
    const auto N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const auto K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const auto oh = (H + 2 * py - kh) / sy + 1, ow = (W + 2 * px - kw) / sx + 1;
    fatseg::Tensor<double> out({N, K, oh, ow});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = b.defined() ? double(b.data()[std::size_t(k)]) : 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t yy = 0; yy < kh; ++yy)
                            for (std::int64_t xx = 0; xx < kw; ++xx) {
                                const std::int64_t iy = oy * sy + yy - py, ix = ox * sx + xx - px;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at(n, c, iy, ix) * w.at(k, c, yy, xx);
                            }
                    out.at(n, k, oy, ox) = acc;
                }
    return out;
}

// Nearest-rank percentile straight from the definition.
inline float percentile_reference(std::vector<float> v, double p) {
    std::sort(v.begin(), v.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
    rank = std::max<std::size_t>(rank, 1);
    return v[std::min(rank, v.size()) - 1];
}

}  // namespace oracle
