#include "fatseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fatseg {

float nearest_rank_percentile(std::span<const float> values, double p) {
    if (values.empty()) throw std::invalid_argument("nearest_rank_percentile: empty input");
    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(p * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

void contrast_adjust(std::span<float> slice) {
    float q = nearest_rank_percentile(slice, 0.99);
    if (q <= 0.0f) {
        q = *std::max_element(slice.begin(), slice.end());
        if (q <= 0.0f) return;  // all-zero slice
    }
    const float inv = 1.0f / q;
    for (auto& v : slice) v = std::min(v, q) * inv;
}

void contrast_adjust_signal_channels(Volume& v) {
    for (int c : {Volume::kWater, Volume::kFat})
        for (std::int64_t z = 0; z < v.dims().depth; ++z) contrast_adjust(v.slice(c, z));
}

Volume assemble_channels(const ScalarField& water, const ScalarField& fat, const ScalarField& fat_fraction) {
    const char* names[2] = {"fat", "fat_fraction"};
    int i = 0;
    for (const ScalarField* f : {&fat, &fat_fraction}) {
        if (f->dims.depth != water.dims.depth)
            throw std::invalid_argument(std::string("assemble_channels: ") + names[i] + " depth " +
                                        std::to_string(f->dims.depth) + " != water depth " +
                                        std::to_string(water.dims.depth));
        if (f->dims.height != water.dims.height)
            throw std::invalid_argument(std::string("assemble_channels: ") + names[i] + " height " +
                                        std::to_string(f->dims.height) + " != water height " +
                                        std::to_string(water.dims.height));
        if (f->dims.width != water.dims.width)
            throw std::invalid_argument(std::string("assemble_channels: ") + names[i] + " width " +
                                        std::to_string(f->dims.width) + " != water width " +
                                        std::to_string(water.dims.width));
        ++i;
    }
    Volume v(3, water.dims, water.spacing);
    std::copy(water.data.begin(), water.data.end(), v.channel(Volume::kWater).begin());
    std::copy(fat.data.begin(), fat.data.end(), v.channel(Volume::kFat).begin());
    std::copy(fat_fraction.data.begin(), fat_fraction.data.end(), v.channel(Volume::kFatFraction).begin());
    return v;
}

namespace {

void xy_offsets(const VolDims& dims, std::int64_t th, std::int64_t tw, PadInfo& info) {
    if (dims.height > th || dims.width > tw)
        throw std::invalid_argument("pad_xy: input " + dims.str() + " exceeds target [" + std::to_string(th) + "," +
                                    std::to_string(tw) + "]");
    info.original = dims;
    info.top = (th - dims.height) / 2;
    info.bottom = th - dims.height - info.top;
    info.left = (tw - dims.width) / 2;
    info.right = tw - dims.width - info.left;
}

}  // namespace

Volume pad_xy(const Volume& v, std::int64_t target_h, std::int64_t target_w, PadInfo& info) {
    xy_offsets(v.dims(), target_h, target_w, info);
    Volume out(v.channels(), {v.dims().depth, target_h, target_w}, v.spacing());
    for (std::int64_t c = 0; c < v.channels(); ++c)
        for (std::int64_t z = 0; z < v.dims().depth; ++z)
            for (std::int64_t y = 0; y < v.dims().height; ++y) {
                auto src = v.slice(c, z).subspan(static_cast<std::size_t>(y * v.dims().width),
                                                 static_cast<std::size_t>(v.dims().width));
                auto dst = out.slice(c, z).subspan(
                    static_cast<std::size_t>((y + info.top) * target_w + info.left),
                    static_cast<std::size_t>(v.dims().width));
                std::copy(src.begin(), src.end(), dst.begin());
            }
    return out;
}

LabelMask pad_xy(const LabelMask& m, std::int64_t target_h, std::int64_t target_w, PadInfo& info) {
    xy_offsets(m.dims, target_h, target_w, info);
    LabelMask out({m.dims.depth, target_h, target_w}, m.spacing);
    for (std::int64_t z = 0; z < m.dims.depth; ++z)
        for (std::int64_t y = 0; y < m.dims.height; ++y)
            for (std::int64_t x = 0; x < m.dims.width; ++x) out.at(z, y + info.top, x + info.left) = m.at(z, y, x);
    return out;
}

Volume pad_slices(const Volume& v, std::int64_t target_depth, PadInfo& info) {
    if (v.dims().depth > target_depth)
        throw std::invalid_argument("pad_slices: depth " + std::to_string(v.dims().depth) + " exceeds target " +
                                    std::to_string(target_depth));
    info.z_pad = target_depth - v.dims().depth;
    if (info.original.numel() == 0) info.original = v.dims();
    Volume out(v.channels(), {target_depth, v.dims().height, v.dims().width}, v.spacing());
    for (std::int64_t c = 0; c < v.channels(); ++c) {
        auto src = v.channel(c);
        auto dst = out.channel(c);
        std::copy(src.begin(), src.end(), dst.begin());
        const std::int64_t sp = v.dims().height * v.dims().width;
        auto last = src.subspan(static_cast<std::size_t>((v.dims().depth - 1) * sp), static_cast<std::size_t>(sp));
        for (std::int64_t z = v.dims().depth; z < target_depth; ++z)
            std::copy(last.begin(), last.end(), dst.begin() + z * sp);
    }
    return out;
}

LabelMask pad_slices(const LabelMask& m, std::int64_t target_depth, PadInfo& info) {
    if (m.dims.depth > target_depth)
        throw std::invalid_argument("pad_slices: depth " + std::to_string(m.dims.depth) + " exceeds target " +
                                    std::to_string(target_depth));
    info.z_pad = target_depth - m.dims.depth;
    if (info.original.numel() == 0) info.original = m.dims;
    LabelMask out({target_depth, m.dims.height, m.dims.width}, m.spacing);
    const std::int64_t sp = m.dims.height * m.dims.width;
    std::copy(m.labels.begin(), m.labels.end(), out.labels.begin());
    for (std::int64_t z = m.dims.depth; z < target_depth; ++z)
        std::copy(m.labels.end() - sp, m.labels.end(), out.labels.begin() + z * sp);
    return out;
}

Volume crop_to_original(const Volume& v, const PadInfo& info) {
    const VolDims& o = info.original;
    Volume out(v.channels(), o, v.spacing());
    for (std::int64_t c = 0; c < v.channels(); ++c)
        for (std::int64_t z = 0; z < o.depth; ++z)
            for (std::int64_t y = 0; y < o.height; ++y)
                for (std::int64_t x = 0; x < o.width; ++x)
                    out.at(c, z, y, x) = v.at(c, z, y + info.top, x + info.left);
    return out;
}

LabelMask crop_to_original(const LabelMask& m, const PadInfo& info) {
    const VolDims& o = info.original;
    LabelMask out(o, m.spacing);
    for (std::int64_t z = 0; z < o.depth; ++z)
        for (std::int64_t y = 0; y < o.height; ++y)
            for (std::int64_t x = 0; x < o.width; ++x) out.at(z, y, x) = m.at(z, y + info.top, x + info.left);
    return out;
}

void mask_background(Volume& v, const LabelMask& body_mask) {
    if (!(body_mask.dims == v.dims()))
        throw std::invalid_argument("mask_background: body mask dims " + body_mask.dims.str() +
                                    " do not match volume dims " + v.dims().str());
    for (std::int64_t c = 0; c < v.channels(); ++c) {
        auto ch = v.channel(c);
        for (std::size_t i = 0; i < ch.size(); ++i)
            if (body_mask.labels[i] == 0) ch[i] = 0.0f;
    }
}

LabelMask ff_threshold(const LabelMask& mask, const Volume& v) {
    if (!(mask.dims == v.dims()))
        throw std::invalid_argument("ff_threshold: mask dims " + mask.dims.str() + " do not match volume dims " +
                                    v.dims().str());
    LabelMask out = mask;
    auto ff = v.channel(Volume::kFatFraction);
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        if (out.labels[i] != LabelMask::kBackground && ff[i] < 0.5f) out.labels[i] = LabelMask::kBackground;
    return out;
}

}  // namespace fatseg
