#pragma once

#include <cstdint>
#include <span>

#include "fatseg/volume.hpp"

namespace fatseg {

// Padding bookkeeping so predictions can be cropped back onto the original
// scan geometry.
struct PadInfo {
    VolDims original{};
    std::int64_t top = 0, bottom = 0, left = 0, right = 0;  // xy zero padding
    std::int64_t z_pad = 0;                                 // replicated trailing slices
};

// Nearest-rank percentile over all pixels of the slice (zeros included);
// rank = ceil(p * N), 1-based.
float nearest_rank_percentile(std::span<const float> values, double p);

// Clips the brightest one percent and rescales to [0, 1] in place. The
// divisor is the clip threshold; a slice whose 99th percentile is zero falls
// back to its maximum, and an all-zero slice stays all-zero.
void contrast_adjust(std::span<float> slice);

// Applies contrast_adjust per transverse slice to the water and fat channels
// only; fat fraction is passed through untouched.
void contrast_adjust_signal_channels(Volume& v);

// Channel order fixed as (water, fat, fat_fraction).
Volume assemble_channels(const ScalarField& water, const ScalarField& fat, const ScalarField& fat_fraction);

// Centered zero padding of the transverse plane; records offsets in `info`.
Volume pad_xy(const Volume& v, std::int64_t target_h, std::int64_t target_w, PadInfo& info);
LabelMask pad_xy(const LabelMask& m, std::int64_t target_h, std::int64_t target_w, PadInfo& info);

// Pads to target_depth by appending copies of the last slice.
Volume pad_slices(const Volume& v, std::int64_t target_depth, PadInfo& info);
LabelMask pad_slices(const LabelMask& m, std::int64_t target_depth, PadInfo& info);

// Exact inverses over the original region.
Volume crop_to_original(const Volume& v, const PadInfo& info);
LabelMask crop_to_original(const LabelMask& m, const PadInfo& info);

// Zeroes all channels outside the body mask.
void mask_background(Volume& v, const LabelMask& body_mask);

// Resets VAT/SAT labels to background wherever fat fraction < 0.5 (strict);
// the reference-protocol exclusion rule.
LabelMask ff_threshold(const LabelMask& mask, const Volume& v);

}  // namespace fatseg
