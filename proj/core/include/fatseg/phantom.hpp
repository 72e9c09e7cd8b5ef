#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fatseg/io.hpp"
#include "fatseg/volume.hpp"

namespace fatseg {

// Abdomen-like phantom: elliptical body cross-section holding a closed
// subcutaneous fat ring (SAT analog) under a thin lean skin rim, internal
// fat blobs (VAT analog), a posterior spine disk excluded from the depots,
// and lean tissue elsewhere. Geometry fractions are relative to the body
// half-extents, so one parameter set works across grid sizes.
struct PhantomParams {
    std::uint64_t seed = 0;
    std::int64_t visit = 1;  // visit >= 2 applies small geometry jitter
    VolDims dims{12, 64, 64};
    Spacing spacing{2.07f, 2.07f, 8.0f};

    double body_rx = 0.82, body_ry = 0.74;            // body semi-axes, fraction of half width/height
    double skin_thickness = 0.07;                     // lean water-bright rim between SAT and background
    double sat_thickness_min = 0.12, sat_thickness_max = 0.20;  // fractional width of the SAT ring
    std::int64_t vat_blob_min = 4, vat_blob_max = 8;
    double vat_size_min = 0.16, vat_size_max = 0.32;  // blob semi-axes, fraction of inner semi-axes
    double spine_radius = 0.14;                       // fraction of inner semi-minor axis
    double spine_offset = 0.62;                       // posterior displacement, fraction of inner semi-axis
    double signal_noise = 0.03;
    double background_noise = 0.05;
    bool include_background_noise = false;
};

struct PhantomGeometry {
    double cx = 0, cy = 0;            // body center in voxel coordinates
    double body_ax = 0, body_ay = 0;  // semi-axes in voxels (slice-dependent bulge applied on top)
    double sat_outer_scale = 0;       // SAT ring outer ellipse = body scaled by this (skin outside it)
    double inner_scale = 0;           // SAT ring inner ellipse = body scaled by this
    double spine_dx = 0, spine_dy = 0, spine_r = 0;  // relative to body center, in voxels
    double z_bulge = 0.08;
    struct Blob {
        double u = 0, v = 0;        // center in fractional inner-ellipse coordinates
        double ru = 0, rv = 0;      // semi-axes as fractions of the inner semi-axes
        double zc = 0, rz = 0;      // center slice / semi-extent in slices
    };
    std::vector<Blob> blobs;

    double body_scale(std::int64_t z, std::int64_t depth) const;
    bool inside_body(double x, double y, std::int64_t z, std::int64_t depth) const;
    bool inside_sat_outer(double x, double y, std::int64_t z, std::int64_t depth) const;
    bool inside_inner(double x, double y, std::int64_t z, std::int64_t depth) const;
    bool inside_spine(double x, double y) const;
    bool inside_any_blob(double x, double y, std::int64_t z, std::int64_t depth) const;
};

struct Phantom {
    Volume volume;        // water, fat, fat_fraction
    LabelMask labels;     // {0, VAT, SAT}
    LabelMask body_mask;  // {0, 1}
    PhantomGeometry geometry;
};

// Deterministic under (params, seed, visit).
Phantom generate_phantom(const PhantomParams& params);

struct CohortParams {
    std::int64_t patients = 10;
    std::int64_t visits = 2;
    std::uint64_t seed = 0;
    PhantomParams base;  // per-patient seeds are derived from `seed`
    std::string center_tag = "uppsala";
};

// Writes image/label/body-mask MVF files plus manifest.csv into out_dir and
// returns the manifest records.
std::vector<ManifestRecord> generate_cohort(const CohortParams& params, const std::filesystem::path& out_dir);

}  // namespace fatseg
