#pragma once

#include <cstdint>
#include <vector>

#include "fatseg/rng.hpp"
#include "fatseg/tensor.hpp"

namespace fatseg {

enum class Mode { Train, Eval };

using Dims = std::vector<std::int64_t>;

// Output extent of a strided convolution along one axis.
inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// Output extent of a transposed convolution along one axis.
inline std::int64_t tconv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride) {
    return (in - 1) * stride + kernel;
}

// Cross-correlation with zero padding and per-axis strides.
// input [N,C,spatial...], weight [K,C,kernel...], bias [K] (optional: pass a
// default-constructed tensor for none). Rank 4 = 2D, rank 5 = 3D.
template <typename T>
Tensor<T> conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
               const Dims& stride, const Dims& padding);

// Gradient of conv with the same stride; weight layout [C_in, C_out, kernel...].
template <typename T>
Tensor<T> transposed_conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                          const Dims& stride);

// Per-window maximum; gradient routed to the first maximum in row-major
// window order.
template <typename T>
Tensor<T> max_pool(Tape<T>* tape, const Tensor<T>& input, const Dims& window, const Dims& stride);

// Channel-wise batch normalization over all non-channel axes. Train mode
// normalizes by batch statistics and updates running stats in place
// (running = (1-momentum)*running + momentum*batch, unbiased variance).
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, double momentum, double epsilon);

// Inverted dropout; the mask is a pure function of the supplied RNG state.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& input, double p, Mode mode, Rng& rng);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

// slope holds 1 shared coefficient or one per channel (axis 1).
template <typename T>
Tensor<T> prelu(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& slope);

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, std::int64_t axis);

template <typename T>
Tensor<T> concat(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, std::int64_t axis);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x);

#define FATSEG_EXTERN_OPS(T)                                                                              \
    extern template Tensor<T> conv(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                   const Dims&, const Dims&);                                             \
    extern template Tensor<T> transposed_conv(Tape<T>*, const Tensor<T>&, const Tensor<T>&,              \
                                              const Tensor<T>&, const Dims&);                            \
    extern template Tensor<T> max_pool(Tape<T>*, const Tensor<T>&, const Dims&, const Dims&);            \
    extern template Tensor<T> batch_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         Tensor<T>&, Tensor<T>&, Mode, double, double);                  \
    extern template Tensor<T> dropout(Tape<T>*, const Tensor<T>&, double, Mode, Rng&);                   \
    extern template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                                          \
    extern template Tensor<T> prelu(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                       \
    extern template Tensor<T> softmax(Tape<T>*, const Tensor<T>&, std::int64_t);                         \
    extern template Tensor<T> concat(Tape<T>*, const Tensor<T>&, const Tensor<T>&, std::int64_t);        \
    extern template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                         \
    extern template Tensor<T> mul(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                         \
    extern template Tensor<T> sum_all(Tape<T>*, const Tensor<T>&);

FATSEG_EXTERN_OPS(float)
FATSEG_EXTERN_OPS(double)
#undef FATSEG_EXTERN_OPS

}  // namespace fatseg
