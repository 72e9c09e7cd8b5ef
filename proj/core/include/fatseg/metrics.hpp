#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fatseg/volume.hpp"

namespace fatseg {

// Set overlap 2|X∩Y| / (|X|+|Y|); both empty -> 1.0.
double dice(const LabelMask& pred, const LabelMask& ref, std::uint8_t cls);

// Labeled voxel count times the physical voxel volume, in mL.
double depot_volume_ml(const LabelMask& mask, std::uint8_t cls);

struct VolumeErrors {
    double signed_ml = 0;
    double abs_pct = 0;
    bool pct_defined = true;  // false when ref == 0 with pred > 0
};

VolumeErrors volume_errors(double pred_ml, double ref_ml);

struct ClassMetrics {
    double dice = 0;
    double pred_ml = 0;
    double ref_ml = 0;
    double signed_ml = 0;
    double abs_pct = 0;
    bool pct_defined = true;
};

struct ScanMetrics {
    std::string scan_id;
    std::string center;
    ClassMetrics vat, sat;
};

ScanMetrics evaluate_scan(const std::string& scan_id, const std::string& center, const LabelMask& pred,
                          const LabelMask& ref);

struct Stat {
    double mean = 0;
    double stddev = 0;  // population standard deviation
    std::int64_t count = 0;
};

struct ClassAggregate {
    Stat dice, err_pct, err_ml;  // err_pct skips scans with undefined percentages
};

struct GroupAggregate {
    std::string center;  // "all" for the global group
    std::int64_t scans = 0;
    ClassAggregate vat, sat;
};

struct ScatterRow {
    double reference_ml = 0;
    double relative_signed_error = 0;  // predicted / reference - 1
    std::string center;
    std::uint8_t cls = 0;
};

struct AggregateReport {
    GroupAggregate all;
    std::vector<GroupAggregate> per_center;
    std::vector<ScatterRow> scatter;
};

AggregateReport aggregate(std::span<const ScanMetrics> metrics);

// Dice between two reference segmentations (inter-operator agreement).
std::array<double, 2> compare_masks(const LabelMask& a, const LabelMask& b);  // {VAT, SAT}

void write_scan_metrics_csv(const std::filesystem::path& path, std::span<const ScanMetrics> metrics);
std::vector<ScanMetrics> read_scan_metrics_csv(const std::filesystem::path& path);
void write_aggregate_csv(const std::filesystem::path& path, const AggregateReport& report);
void write_scatter_csv(const std::filesystem::path& path, const AggregateReport& report);

// Compact deterministic float formatting shared by the CSV writers.
std::string format_double(double v);

}  // namespace fatseg
