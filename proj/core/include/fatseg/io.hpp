#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fatseg/volume.hpp"

namespace fatseg {

// MVF1 container: magic "MVF1", little-endian u32 header (channel count,
// depth, height, width), 3 x f32 spacing in mm, u8 dtype code (0 = float32
// image, 1 = u8 labels), then channel-major row-major payload. Reads are
// bit-exact inverses of writes.
void write_volume(const std::filesystem::path& path, const Volume& v);
void write_volume(const std::filesystem::path& path, const LabelMask& m);
Volume read_volume(const std::filesystem::path& path);
LabelMask read_label_mask(const std::filesystem::path& path);

struct ManifestRecord {
    std::string patient_id;
    int visit = 0;
    std::filesystem::path image_path;
    std::filesystem::path label_path;
    std::string center_tag;

    std::string scan_id() const { return patient_id + "_v" + std::to_string(visit); }
};

// Text manifest: one record per line as
//   patient_id, visit, image_path, label_path, center_tag
// with '#' comments. Relative paths resolve against the manifest directory;
// referenced files must exist; duplicate (patient, visit) pairs are rejected.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Conventional sidecar path for a scan's body mask: image.mvf -> image.body.mvf
std::filesystem::path body_mask_path(const std::filesystem::path& image_path);

}  // namespace fatseg
