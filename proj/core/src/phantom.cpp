#include "fatseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fatseg/rng.hpp"

namespace fatseg {

double PhantomGeometry::body_scale(std::int64_t z, std::int64_t depth) const {
    if (depth <= 1) return 1.0;
    const double zc = static_cast<double>(depth - 1) / 2.0;
    const double t = (static_cast<double>(z) - zc) / zc;
    return 1.0 - z_bulge * t * t;
}

bool PhantomGeometry::inside_body(double x, double y, std::int64_t z, std::int64_t depth) const {
    const double s = body_scale(z, depth);
    const double ex = (x - cx) / (body_ax * s);
    const double ey = (y - cy) / (body_ay * s);
    return ex * ex + ey * ey <= 1.0;
}

bool PhantomGeometry::inside_sat_outer(double x, double y, std::int64_t z, std::int64_t depth) const {
    const double s = body_scale(z, depth) * sat_outer_scale;
    const double ex = (x - cx) / (body_ax * s);
    const double ey = (y - cy) / (body_ay * s);
    return ex * ex + ey * ey <= 1.0;
}

bool PhantomGeometry::inside_inner(double x, double y, std::int64_t z, std::int64_t depth) const {
    const double s = body_scale(z, depth) * inner_scale;
    const double ex = (x - cx) / (body_ax * s);
    const double ey = (y - cy) / (body_ay * s);
    return ex * ex + ey * ey <= 1.0;
}

bool PhantomGeometry::inside_spine(double x, double y) const {
    const double dx = x - (cx + spine_dx);
    const double dy = y - (cy + spine_dy);
    return dx * dx + dy * dy <= spine_r * spine_r;
}

bool PhantomGeometry::inside_any_blob(double x, double y, std::int64_t z, std::int64_t depth) const {
    const double s = body_scale(z, depth) * inner_scale;
    const double ax = body_ax * s, ay = body_ay * s;
    for (const auto& b : blobs) {
        const double bx = cx + b.u * ax, by = cy + b.v * ay;
        const double ex = (x - bx) / (b.ru * ax);
        const double ey = (y - by) / (b.rv * ay);
        const double ez = (static_cast<double>(z) - b.zc) / b.rz;
        if (ex * ex + ey * ey + ez * ez <= 1.0) return true;
    }
    return false;
}

namespace {

void validate(const PhantomParams& p) {
    auto fail = [](const std::string& what) {
        throw std::invalid_argument("generate_phantom: degenerate geometry: " + what);
    };
    if (p.dims.depth < 2 || p.dims.height < 16 || p.dims.width < 16)
        fail("dims " + p.dims.str() + " too small for a non-degenerate phantom");
    if (p.body_rx <= 0.2 || p.body_rx >= 1.0 || p.body_ry <= 0.2 || p.body_ry >= 1.0)
        fail("body semi-axis fractions must lie in (0.2, 1.0)");
    if (p.skin_thickness < 0.0 || p.skin_thickness >= 0.3) fail("skin thickness fraction must lie in [0, 0.3)");
    if (p.sat_thickness_min <= 0.0 || p.sat_thickness_max >= 0.5 || p.sat_thickness_min > p.sat_thickness_max)
        fail("SAT ring thickness range must satisfy 0 < min <= max < 0.5 (ring must stay closed)");
    if (p.skin_thickness + p.sat_thickness_max >= 0.6)
        fail("skin plus SAT ring leave no room for the abdominal interior");
    if (p.vat_blob_min < 1 || p.vat_blob_max < p.vat_blob_min) fail("VAT blob count range is empty");
    if (p.vat_size_min <= 0.0 || p.vat_size_max >= 0.45 || p.vat_size_min > p.vat_size_max)
        fail("VAT blob size range must satisfy 0 < min <= max < 0.45 (blobs must fit inside the abdominal wall)");
    if (p.spine_radius <= 0.0 || p.spine_radius >= 0.3) fail("spine radius fraction must lie in (0, 0.3)");
    if (p.spine_offset <= 0.0 || p.spine_offset + p.spine_radius >= 0.95)
        fail("spine disk (offset + radius) must stay inside the inner ellipse");
    if (p.signal_noise < 0.0 || p.background_noise < 0.0) fail("noise levels must be >= 0");
    if (p.visit < 1) fail("visit index must be >= 1");
}

PhantomGeometry sample_geometry(const PhantomParams& p) {
    Rng geo(split_seed(p.seed, 11));
    PhantomGeometry g;
    g.cx = static_cast<double>(p.dims.width - 1) / 2.0;
    g.cy = static_cast<double>(p.dims.height - 1) / 2.0;
    // per-patient variation of the overall silhouette
    g.body_ax = p.body_rx * (p.dims.width / 2.0) * geo.uniform(0.93, 1.0);
    g.body_ay = p.body_ry * (p.dims.height / 2.0) * geo.uniform(0.93, 1.0);
    g.sat_outer_scale = 1.0 - p.skin_thickness;
    g.inner_scale = g.sat_outer_scale - geo.uniform(p.sat_thickness_min, p.sat_thickness_max);
    const double inner_minor = std::min(g.body_ax, g.body_ay) * g.inner_scale;
    g.spine_r = p.spine_radius * inner_minor;
    g.spine_dx = 0.0;
    g.spine_dy = p.spine_offset * g.body_ay * g.inner_scale;

    const std::int64_t blob_count = geo.uniform_int(p.vat_blob_min, p.vat_blob_max);
    const double zmax = static_cast<double>(p.dims.depth - 1);
    for (std::int64_t i = 0; i < blob_count; ++i) {
        PhantomGeometry::Blob b;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            b.ru = geo.uniform(p.vat_size_min, p.vat_size_max);
            b.rv = geo.uniform(p.vat_size_min, p.vat_size_max);
            b.rz = geo.uniform(2.0, std::max(2.5, zmax / 2.0));
            b.zc = geo.uniform(b.rz * 0.5, zmax - b.rz * 0.5);
            // keep the blob's xy extent inside the inner ellipse with margin
            const double margin = 0.95;
            const double umax = margin - b.ru;
            const double vmax = margin - b.rv;
            if (umax <= 0 || vmax <= 0) continue;
            b.u = geo.uniform(-umax, umax);
            b.v = geo.uniform(-vmax, vmax);
            if (b.u * b.u / (umax * umax) + b.v * b.v / (vmax * vmax) > 1.0) continue;
            // stay clear of the spine disk region (worst-case slice scale 1.0)
            const double bx = b.u * g.body_ax * g.inner_scale;
            const double by = b.v * g.body_ay * g.inner_scale;
            const double clearance = std::hypot(bx - g.spine_dx, by - g.spine_dy);
            const double blob_r = std::max(b.ru * g.body_ax, b.rv * g.body_ay) * g.inner_scale;
            if (clearance < g.spine_r + blob_r * 0.4) continue;
            placed = true;
        }
        if (!placed)
            throw std::invalid_argument(
                "generate_phantom: degenerate geometry: could not place a VAT blob inside the abdominal wall away "
                "from the spine disk");
        g.blobs.push_back(b);
    }

    if (p.visit >= 2) {
        Rng jitter(split_seed(p.seed, 1000 + static_cast<std::uint64_t>(p.visit)));
        g.body_ax *= 1.0 + jitter.uniform(-0.01, 0.01);
        g.body_ay *= 1.0 + jitter.uniform(-0.01, 0.01);
        g.cx += jitter.uniform(-2.0, 2.0);
        g.cy += jitter.uniform(-2.0, 2.0);
        for (auto& b : g.blobs) {
            b.ru *= 1.0 + jitter.uniform(-0.015, 0.015);
            b.rv *= 1.0 + jitter.uniform(-0.015, 0.015);
            b.rz *= 1.0 + jitter.uniform(-0.015, 0.015);
        }
    }
    return g;
}

}  // namespace

Phantom generate_phantom(const PhantomParams& p) {
    validate(p);
    Phantom ph;
    ph.geometry = sample_geometry(p);
    const PhantomGeometry& g = ph.geometry;

    ph.volume = Volume(3, p.dims, p.spacing);
    ph.labels = LabelMask(p.dims, p.spacing);
    ph.body_mask = LabelMask(p.dims, p.spacing);

    // voxel-major noise streams, distinct per visit (repeat scans share
    // geometry, not noise). Background noise draws from its own stream so
    // the body voxels are bit-identical with and without background noise.
    Rng noise(split_seed(p.seed, 77 + static_cast<std::uint64_t>(p.visit)));
    Rng bg_noise(split_seed(p.seed, 177 + static_cast<std::uint64_t>(p.visit)));

    auto water = ph.volume.channel(Volume::kWater);
    auto fat = ph.volume.channel(Volume::kFat);
    auto ff = ph.volume.channel(Volume::kFatFraction);

    std::size_t i = 0;
    for (std::int64_t z = 0; z < p.dims.depth; ++z)
        for (std::int64_t y = 0; y < p.dims.height; ++y)
            for (std::int64_t x = 0; x < p.dims.width; ++x, ++i) {
                const double fx = static_cast<double>(x), fy = static_cast<double>(y);
                std::uint8_t label = LabelMask::kBackground;
                bool body = false;
                if (g.inside_body(fx, fy, z, p.dims.depth)) {
                    body = true;
                    if (g.inside_sat_outer(fx, fy, z, p.dims.depth)) {
                        if (!g.inside_inner(fx, fy, z, p.dims.depth)) {
                            label = LabelMask::kSat;
                        } else if (!g.inside_spine(fx, fy) && g.inside_any_blob(fx, fy, z, p.dims.depth)) {
                            label = LabelMask::kVat;
                        }
                    }
                    // the rim outside the SAT ring stays lean (skin)
                }
                ph.body_mask.labels[i] = body ? 1 : 0;
                ph.labels.labels[i] = label;

                if (!body) {
                    if (p.include_background_noise) {
                        water[i] = static_cast<float>(std::abs(bg_noise.normal(0.0, p.background_noise)));
                        fat[i] = static_cast<float>(std::abs(bg_noise.normal(0.0, p.background_noise)));
                        ff[i] = static_cast<float>(bg_noise.uniform());
                    } else {
                        water[i] = fat[i] = ff[i] = 0.0f;
                    }
                    continue;
                }
                const bool adipose = label != LabelMask::kBackground;
                const double fat_base = adipose ? 0.85 : 0.10;
                const double water_base = adipose ? 0.12 : 0.85;
                const double fv = std::clamp(fat_base + noise.normal(0.0, p.signal_noise), 0.01, 1.0);
                const double wv = std::clamp(water_base + noise.normal(0.0, p.signal_noise), 0.01, 1.0);
                double f = fv / (fv + wv) + noise.normal(0.0, 0.5 * p.signal_noise);
                f = adipose ? std::clamp(f, 0.5, 1.0) : std::clamp(f, 0.0, 0.49);
                water[i] = static_cast<float>(wv);
                fat[i] = static_cast<float>(fv);
                ff[i] = static_cast<float>(f);
            }
    return ph;
}

std::vector<ManifestRecord> generate_cohort(const CohortParams& params, const std::filesystem::path& out_dir) {
    if (params.patients < 1) throw std::invalid_argument("generate_cohort: patient count must be >= 1");
    if (params.visits < 1) throw std::invalid_argument("generate_cohort: visit count must be >= 1");
    std::filesystem::create_directories(out_dir);

    std::vector<ManifestRecord> records;
    for (std::int64_t pi = 0; pi < params.patients; ++pi) {
        for (std::int64_t visit = 1; visit <= params.visits; ++visit) {
            PhantomParams pp = params.base;
            pp.seed = split_seed(params.seed, static_cast<std::uint64_t>(pi));
            pp.visit = visit;
            const Phantom ph = generate_phantom(pp);

            char stem[32];
            std::snprintf(stem, sizeof(stem), "p%03lld_v%lld", static_cast<long long>(pi + 1),
                          static_cast<long long>(visit));
            ManifestRecord r;
            r.patient_id = "p" + std::string(stem + 1, 3);
            r.visit = static_cast<int>(visit);
            r.image_path = out_dir / (std::string(stem) + ".mvf");
            r.label_path = out_dir / (std::string(stem) + ".labels.mvf");
            r.center_tag = params.center_tag;

            write_volume(r.image_path, ph.volume);
            write_volume(r.label_path, ph.labels);
            write_volume(body_mask_path(r.image_path), ph.body_mask);
            records.push_back(std::move(r));
        }
    }
    save_manifest(out_dir / "manifest.csv", records);
    return records;
}

}  // namespace fatseg
