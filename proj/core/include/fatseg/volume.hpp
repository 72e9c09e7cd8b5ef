#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fatseg {

struct VolDims {
    std::int64_t depth = 0, height = 0, width = 0;
    std::int64_t numel() const { return depth * height * width; }
    bool operator==(const VolDims&) const = default;
    std::string str() const {
        return "[" + std::to_string(depth) + "," + std::to_string(height) + "," + std::to_string(width) + "]";
    }
};

// Physical voxel edge lengths in mm.
struct Spacing {
    float x = 0, y = 0, z = 0;
    double voxel_mm3() const { return double(x) * double(y) * double(z); }
    bool operator==(const Spacing&) const = default;
};

// Multi-channel 3D image, channel-major [C, D, H, W]. The segmentation
// pipeline uses the fixed channel order (water, fat, fat_fraction).
class Volume {
public:
    static constexpr int kWater = 0;
    static constexpr int kFat = 1;
    static constexpr int kFatFraction = 2;

    Volume() = default;
    Volume(std::int64_t channels, VolDims dims, Spacing spacing)
        : channels_(channels), dims_(dims), spacing_(spacing),
          data_(static_cast<std::size_t>(channels * dims.numel())) {
        if (channels < 1) throw std::invalid_argument("Volume: channel count must be >= 1");
        if (dims.depth < 1 || dims.height < 1 || dims.width < 1)
            throw std::invalid_argument("Volume: dims must be positive, got " + dims.str());
        if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
            throw std::invalid_argument("Volume: spacing components must be positive");
    }

    std::int64_t channels() const { return channels_; }
    const VolDims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }

    std::span<float> channel(std::int64_t c) {
        return std::span<float>(data_).subspan(static_cast<std::size_t>(c * dims_.numel()),
                                               static_cast<std::size_t>(dims_.numel()));
    }
    std::span<const float> channel(std::int64_t c) const {
        return std::span<const float>(data_).subspan(static_cast<std::size_t>(c * dims_.numel()),
                                                     static_cast<std::size_t>(dims_.numel()));
    }

    // One transverse slice of one channel.
    std::span<float> slice(std::int64_t c, std::int64_t z) {
        const std::int64_t sp = dims_.height * dims_.width;
        return channel(c).subspan(static_cast<std::size_t>(z * sp), static_cast<std::size_t>(sp));
    }
    std::span<const float> slice(std::int64_t c, std::int64_t z) const {
        const std::int64_t sp = dims_.height * dims_.width;
        return channel(c).subspan(static_cast<std::size_t>(z * sp), static_cast<std::size_t>(sp));
    }

    float& at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(((c * dims_.depth + z) * dims_.height + y) * dims_.width + x)];
    }
    float at(std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(((c * dims_.depth + z) * dims_.height + y) * dims_.width + x)];
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

private:
    std::int64_t channels_ = 0;
    VolDims dims_{};
    Spacing spacing_{};
    std::vector<float> data_;
};

// Voxel-wise class map. Label domain {0=background, 1=VAT, 2=SAT}; body
// masks reuse the container with values {0, 1}.
struct LabelMask {
    static constexpr std::uint8_t kBackground = 0;
    static constexpr std::uint8_t kVat = 1;
    static constexpr std::uint8_t kSat = 2;

    VolDims dims{};
    Spacing spacing{};
    std::vector<std::uint8_t> labels;

    LabelMask() = default;
    LabelMask(VolDims d, Spacing s) : dims(d), spacing(s), labels(static_cast<std::size_t>(d.numel())) {}

    std::uint8_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return labels[static_cast<std::size_t>((z * dims.height + y) * dims.width + x)];
    }
    std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return labels[static_cast<std::size_t>((z * dims.height + y) * dims.width + x)];
    }
};

// Single-channel float field; carrier for the inputs of assemble_channels.
struct ScalarField {
    VolDims dims{};
    Spacing spacing{};
    std::vector<float> data;

    ScalarField() = default;
    ScalarField(VolDims d, Spacing s) : dims(d), spacing(s), data(static_cast<std::size_t>(d.numel())) {}
};

}  // namespace fatseg
