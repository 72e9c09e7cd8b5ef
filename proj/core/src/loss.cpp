#include "fatseg/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fatseg {

template <typename T>
Tensor<T> cross_entropy_loss(Tape<T>* tape, const Tensor<T>& scores, std::span<const std::uint8_t> target,
                             const std::vector<double>& class_weights) {
    if (scores.rank() < 2) throw std::invalid_argument("cross_entropy_loss: scores rank must be >= 2");
    const std::int64_t batch = scores.extent(0), klass = scores.extent(1);
    std::int64_t sp = 1;
    for (std::int64_t a = 2; a < scores.rank(); ++a) sp *= scores.extent(a);
    const std::int64_t pixels = batch * sp;
    if (static_cast<std::int64_t>(target.size()) != pixels)
        throw std::invalid_argument("cross_entropy_loss: target has " + std::to_string(target.size()) +
                                    " labels, expected " + std::to_string(pixels));
    std::vector<double> w = class_weights;
    if (w.empty()) w.assign(static_cast<std::size_t>(klass), 1.0);
    if (static_cast<std::int64_t>(w.size()) != klass)
        throw std::invalid_argument("cross_entropy_loss: " + std::to_string(w.size()) + " class weights for " +
                                    std::to_string(klass) + " classes");

    Tensor<T> prob(scores.shape());
    std::vector<T> terms(static_cast<std::size_t>(pixels));
    std::vector<T> weights(static_cast<std::size_t>(pixels));
    auto s = scores.data();
    auto p = prob.data();

    for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t i = 0; i < sp; ++i) {
            const std::int64_t pix = n * sp + i;
            const std::uint8_t y = target[static_cast<std::size_t>(pix)];
            if (y >= klass)
                throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(int(y)) +
                                            " outside [0," + std::to_string(klass) + ") at pixel " +
                                            std::to_string(pix));
            const std::int64_t base = (n * klass) * sp + i;
            T mx = s[static_cast<std::size_t>(base)];
            for (std::int64_t k = 1; k < klass; ++k)
                mx = std::max(mx, s[static_cast<std::size_t>(base + k * sp)]);
            T denom = T(0);
            for (std::int64_t k = 0; k < klass; ++k)
                denom += std::exp(s[static_cast<std::size_t>(base + k * sp)] - mx);
            const T lse = std::log(denom) + mx;
            const T inv = T(1) / denom;
            for (std::int64_t k = 0; k < klass; ++k)
                p[static_cast<std::size_t>(base + k * sp)] =
                    std::exp(s[static_cast<std::size_t>(base + k * sp)] - mx) * inv;
            const T wy = static_cast<T>(w[y]);
            terms[static_cast<std::size_t>(pix)] = wy * (lse - s[static_cast<std::size_t>(base + y * sp)]);
            weights[static_cast<std::size_t>(pix)] = wy;
        }

    const T wsum = pairwise_sum<T>(weights);
    if (wsum <= T(0)) throw std::invalid_argument("cross_entropy_loss: class weights sum to zero over targets");
    Tensor<T> out = Tensor<T>::scalar(pairwise_sum<T>(terms) / wsum);

    if (tape != nullptr && scores.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> s_c = scores, p_c = prob, out_c = out;
        std::vector<std::uint8_t> tgt(target.begin(), target.end());
        tape->record([s_c, p_c, out_c, tgt = std::move(tgt), w, wsum, batch, klass, sp]() mutable {
            const T g = out_c.grad()[0];
            auto ds = s_c.grad();
            auto pv = p_c.data();
            for (std::int64_t n = 0; n < batch; ++n)
                for (std::int64_t i = 0; i < sp; ++i) {
                    const std::uint8_t y = tgt[static_cast<std::size_t>(n * sp + i)];
                    const T scale = g * static_cast<T>(w[y]) / wsum;
                    const std::int64_t base = (n * klass) * sp + i;
                    for (std::int64_t k = 0; k < klass; ++k) {
                        const std::size_t ix = static_cast<std::size_t>(base + k * sp);
                        ds[ix] += scale * (pv[ix] - (k == y ? T(1) : T(0)));
                    }
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> dice_loss(Tape<T>* tape, const Tensor<T>& prob, std::span<const std::uint8_t> target,
                    const DiceLossParams& params) {
    if (params.alpha <= 0.0)
        throw std::invalid_argument("dice_loss: alpha must be > 0, got " + std::to_string(params.alpha));
    if (prob.rank() < 2) throw std::invalid_argument("dice_loss: prob rank must be >= 2");
    const std::int64_t batch = prob.extent(0), klass = prob.extent(1);
    std::int64_t sp = 1;
    for (std::int64_t a = 2; a < prob.rank(); ++a) sp *= prob.extent(a);
    const std::int64_t pixels = batch * sp;
    if (static_cast<std::int64_t>(target.size()) != pixels)
        throw std::invalid_argument("dice_loss: target has " + std::to_string(target.size()) +
                                    " labels, expected " + std::to_string(pixels));

    std::vector<std::int64_t> classes;
    for (std::int64_t c = params.include_background ? 0 : 1; c < klass; ++c) classes.push_back(c);
    if (classes.empty()) throw std::invalid_argument("dice_loss: empty class set");

    auto p = prob.data();
    std::vector<T> scratch(static_cast<std::size_t>(pixels));
    std::vector<double> inter(classes.size()), psum(classes.size()), gsum(classes.size());
    double total = 0.0;
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        const std::int64_t c = classes[ci];
        for (std::int64_t n = 0; n < batch; ++n) {
            const T* pc = p.data() + (n * klass + c) * sp;
            std::copy(pc, pc + sp, scratch.data() + n * sp);
        }
        psum[ci] = static_cast<double>(pairwise_sum<T>(scratch));
        std::int64_t gcount = 0;
        for (std::int64_t i = 0; i < pixels; ++i) {
            const bool match = target[static_cast<std::size_t>(i)] == c;
            if (!match) scratch[static_cast<std::size_t>(i)] = T(0);
            gcount += match;
        }
        inter[ci] = static_cast<double>(pairwise_sum<T>(scratch));
        gsum[ci] = static_cast<double>(gcount);
        total += 1.0 - (2.0 * inter[ci] + params.alpha) / (psum[ci] + gsum[ci] + params.alpha);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(classes.size())));

    if (tape != nullptr && prob.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> p_c = prob, out_c = out;
        std::vector<std::uint8_t> tgt(target.begin(), target.end());
        const double alpha = params.alpha;
        tape->record([p_c, out_c, tgt = std::move(tgt), classes, inter, psum, gsum, alpha, batch, klass, sp]() mutable {
            const double g = static_cast<double>(out_c.grad()[0]) / static_cast<double>(classes.size());
            auto dp = p_c.grad();
            for (std::size_t ci = 0; ci < classes.size(); ++ci) {
                const std::int64_t c = classes[ci];
                const double denom = psum[ci] + gsum[ci] + alpha;
                const double d_p = (2.0 * inter[ci] + alpha) / (denom * denom);  // d/d|X|
                const double d_i = -2.0 / denom;                                 // d/d|X∩Y|
                for (std::int64_t n = 0; n < batch; ++n)
                    for (std::int64_t i = 0; i < sp; ++i) {
                        const bool match = tgt[static_cast<std::size_t>(n * sp + i)] == c;
                        const std::size_t ix = static_cast<std::size_t>((n * klass + c) * sp + i);
                        dp[ix] += static_cast<T>(g * (d_p + (match ? d_i : 0.0)));
                    }
            }
        });
    }
    return out;
}

double hard_dice_loss(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> ref, std::uint8_t cls,
                      double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("hard_dice_loss: alpha must be > 0");
    if (pred.size() != ref.size())
        throw std::invalid_argument("hard_dice_loss: size mismatch " + std::to_string(pred.size()) + " vs " +
                                    std::to_string(ref.size()));
    std::int64_t inter = 0, x = 0, y = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_x = pred[i] == cls, in_y = ref[i] == cls;
        inter += in_x && in_y;
        x += in_x;
        y += in_y;
    }
    return 1.0 - (2.0 * static_cast<double>(inter) + alpha) / (static_cast<double>(x + y) + alpha);
}

template Tensor<float> cross_entropy_loss(Tape<float>*, const Tensor<float>&, std::span<const std::uint8_t>,
                                          const std::vector<double>&);
template Tensor<double> cross_entropy_loss(Tape<double>*, const Tensor<double>&, std::span<const std::uint8_t>,
                                           const std::vector<double>&);
template Tensor<float> dice_loss(Tape<float>*, const Tensor<float>&, std::span<const std::uint8_t>,
                                 const DiceLossParams&);
template Tensor<double> dice_loss(Tape<double>*, const Tensor<double>&, std::span<const std::uint8_t>,
                                  const DiceLossParams&);

}  // namespace fatseg
