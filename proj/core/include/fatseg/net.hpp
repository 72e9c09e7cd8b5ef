#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fatseg/ops.hpp"
#include "fatseg/rng.hpp"
#include "fatseg/tensor.hpp"

namespace fatseg {

// Fig.-2 style encoder-decoder over 2D slices: per level two 3x3 convs with
// ReLU, 2x2 max-pool down, 2x2 transposed-conv up, channel-concat long skips,
// zero padding so every level keeps its entry resolution.
struct UNetSpec {
    std::int64_t in_channels = 3;
    std::int64_t num_classes = 3;
    std::int64_t depth = 4;  // downsampling levels
    std::int64_t base_channels = 64;
    bool conv_bias = true;
};

// Volumetric variant with anisotropic down-transitions. Transition kernels
// match their strides, so a z-stride of 1 leaves the slice count untouched
// (depth schedule 24,24,12,12,6 along the encoder). The first convolutional
// block carries no residual add; all later blocks do.
struct VNetSpec {
    std::int64_t in_channels = 3;
    std::int64_t num_classes = 3;
    std::int64_t levels = 5;
    std::int64_t base_channels = 16;
    std::int64_t input_depth = 24;
    std::vector<std::array<std::int64_t, 3>> down_strides{{1, 2, 2}, {2, 2, 2}, {1, 2, 2}, {2, 2, 2}};
    std::vector<std::int64_t> encoder_convs{1, 2, 3, 3, 3};
    std::int64_t decoder_convs_per_level = 1;
    double dropout_p = 0.5;  // applied at the two deepest encoder levels
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
};

using NetSpec = std::variant<UNetSpec, VNetSpec>;

struct TraceEntry {
    std::string name;
    Shape shape;
    double checksum = 0;  // fixed-order sum of the activation
};

struct ShapeTrace {
    std::vector<TraceEntry> entries;
    const TraceEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

template <typename T>
struct ForwardOptions {
    Tape<T>* tape = nullptr;
    Mode mode = Mode::Eval;
    Rng* rng = nullptr;  // consumed by train-mode dropout
    ShapeTrace* trace = nullptr;
};

enum class ParamKind { Trainable, Buffer };

template <typename T>
using ParamVisitor = std::function<void(const std::string& path, Tensor<T>& value, ParamKind kind)>;

struct BlockInfo {
    std::string name;
    bool residual_add = false;
};

template <typename T>
class Network {
public:
    virtual ~Network() = default;
    virtual Tensor<T> forward(const Tensor<T>& batch, const ForwardOptions<T>& opts) = 0;
    // Visits parameters and buffers in a fixed construction order; keys are
    // the layer paths used by checkpoints.
    virtual void visit_state(const ParamVisitor<T>& fn) = 0;
    virtual std::string arch() const = 0;
    virtual int spatial_rank() const = 0;
    virtual NetSpec spec() const = 0;
    virtual std::vector<BlockInfo> blocks() const { return {}; }
};

template <typename T>
std::unique_ptr<Network<T>> build_unet(const UNetSpec& spec, Rng& rng);

template <typename T>
std::unique_ptr<Network<T>> build_vnet(const VNetSpec& spec, Rng& rng);

template <typename T>
std::unique_ptr<Network<T>> build_network(const NetSpec& spec, Rng& rng);

template <typename T>
std::int64_t param_count(Network<T>& net);

extern template std::unique_ptr<Network<float>> build_unet(const UNetSpec&, Rng&);
extern template std::unique_ptr<Network<double>> build_unet(const UNetSpec&, Rng&);
extern template std::unique_ptr<Network<float>> build_vnet(const VNetSpec&, Rng&);
extern template std::unique_ptr<Network<double>> build_vnet(const VNetSpec&, Rng&);
extern template std::unique_ptr<Network<float>> build_network(const NetSpec&, Rng&);
extern template std::unique_ptr<Network<double>> build_network(const NetSpec&, Rng&);
extern template std::int64_t param_count(Network<float>&);
extern template std::int64_t param_count(Network<double>&);

}  // namespace fatseg
