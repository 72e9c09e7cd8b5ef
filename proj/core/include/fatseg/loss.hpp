#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fatseg/ops.hpp"
#include "fatseg/tensor.hpp"

namespace fatseg {

// Mean over pixels of -log softmax(scores)[target]; weighted terms are
// normalized by the summed weights of the targets (plain mean for uniform
// weights). target holds one label per pixel in row-major [N, spatial...]
// order; labels must lie in [0, num_classes).
template <typename T>
Tensor<T> cross_entropy_loss(Tape<T>* tape, const Tensor<T>& scores, std::span<const std::uint8_t> target,
                             const std::vector<double>& class_weights = {});

struct DiceLossParams {
    double alpha = 0.1;
    bool include_background = false;  // default: foreground classes only
};

// Soft relaxation of the set dice loss: per class c,
//   |X∩Y| -> sum p_c * 1[y=c],  |X| -> sum p_c,  |Y| -> sum 1[y=c],
//   loss_c = 1 - (2|X∩Y| + alpha) / (|X| + |Y| + alpha),
// averaged over the included classes. prob is expected to be softmax output.
template <typename T>
Tensor<T> dice_loss(Tape<T>* tape, const Tensor<T>& prob, std::span<const std::uint8_t> target,
                    const DiceLossParams& params = {});

// Hard-set variant over binary membership, exact in the set counts.
double hard_dice_loss(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> ref, std::uint8_t cls,
                      double alpha);

extern template Tensor<float> cross_entropy_loss(Tape<float>*, const Tensor<float>&, std::span<const std::uint8_t>,
                                                 const std::vector<double>&);
extern template Tensor<double> cross_entropy_loss(Tape<double>*, const Tensor<double>&, std::span<const std::uint8_t>,
                                                  const std::vector<double>&);
extern template Tensor<float> dice_loss(Tape<float>*, const Tensor<float>&, std::span<const std::uint8_t>,
                                        const DiceLossParams&);
extern template Tensor<double> dice_loss(Tape<double>*, const Tensor<double>&, std::span<const std::uint8_t>,
                                         const DiceLossParams&);

}  // namespace fatseg
