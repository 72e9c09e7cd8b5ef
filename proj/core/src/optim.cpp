#include "fatseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fatseg {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamSlot<T>& slot, const AdamConfig& cfg,
                 std::int64_t t, const std::string& path) {
    if (param.size() != grad.size())
        throw std::invalid_argument("adam_update: param/grad size mismatch for " + path);
    if (slot.m.empty()) {
        slot.m.assign(param.size(), T(0));
        slot.v.assign(param.size(), T(0));
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        if (std::isnan(static_cast<double>(g)))
            throw std::runtime_error("adam_update: NaN gradient in " + path + " at element " + std::to_string(i));
        slot.m[i] = static_cast<T>(cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g);
        slot.v[i] = static_cast<T>(cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g);
        const double mhat = static_cast<double>(slot.m[i]) / bc1;
        const double vhat = static_cast<double>(slot.v[i]) / bc2;
        param[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

template void adam_update(std::span<float>, std::span<const float>, AdamSlot<float>&, const AdamConfig&,
                          std::int64_t, const std::string&);
template void adam_update(std::span<double>, std::span<const double>, AdamSlot<double>&, const AdamConfig&,
                          std::int64_t, const std::string&);

}  // namespace fatseg
