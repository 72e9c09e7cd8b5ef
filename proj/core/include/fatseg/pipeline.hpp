#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fatseg/metrics.hpp"
#include "fatseg/train.hpp"

namespace fatseg {

// `key = value` run configuration with '#' comments. Unknown keys are
// rejected; arch-dependent defaults (base_channels, iterations, loss) stay
// unset until resolved. Every run writes its fully resolved config beside
// its outputs.
struct RunConfig {
    std::string arch = "unet";  // unet | vnet
    std::optional<std::int64_t> base_channels;
    std::optional<std::int64_t> iterations;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    std::optional<std::string> loss;  // cross_entropy | dice
    double alpha = 0.1;
    int folds = 10;
    std::filesystem::path manifest;
    std::filesystem::path output_dir;
    std::int64_t eval_every = 1000;
    std::int64_t checkpoint_every = 1000;
    bool ff_threshold_enabled = false;

    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;  // resolved snapshot

    std::int64_t resolved_base_channels() const { return base_channels ? *base_channels : (arch == "unet" ? 64 : 16); }
    std::int64_t resolved_iterations() const { return iterations ? *iterations : (arch == "unet" ? 65000 : 15000); }
    std::string resolved_loss() const { return loss ? *loss : (arch == "unet" ? "cross_entropy" : "dice"); }

    NetSpec make_net_spec() const;
    TrainConfig make_train_config() const;
};

struct PrepareOptions {
    bool apply_body_mask = true;  // sidecar <image>.body.mvf, when present
    std::optional<std::filesystem::path> body_mask_file;
    std::optional<std::pair<std::int64_t, std::int64_t>> pad_xy_target;  // default: round up to pad_multiple
    std::int64_t pad_multiple = 16;
    bool volumetric = false;  // additionally pad depth to input_depth
    std::int64_t input_depth = 24;
    bool load_labels = true;
};

PreparedScan prepare_scan(const ManifestRecord& rec, const PrepareOptions& opts);
PreparedScan prepare_volume(const Volume& v, const LabelMask* labels, const LabelMask* body_mask,
                            const PrepareOptions& opts);

// Class scores for a whole prepared scan on its padded grid, eval mode:
// [num_classes, D, H, W] (slice-wise forwards for a 2D network).
Tensor<float> forward_scores(Network<float>& net, const PreparedScan& scan);

// The two equivalent unpadding routes ("padding slices are excluded").
LabelMask mask_from_scores_crop_first(const Tensor<float>& scores, const PadInfo& pad, const Spacing& spacing);
LabelMask mask_from_scores_argmax_first(const Tensor<float>& scores, const PadInfo& pad, const Spacing& spacing);

// Full prediction on the original grid; optionally applies the fat-fraction
// exclusion rule against the unprocessed volume.
LabelMask predict_mask(Network<float>& net, const PreparedScan& scan, bool apply_ff_threshold);

struct CvOptions {
    int jobs = 1;  // folds dispatched to a bounded worker pool
};

struct CvResult {
    std::vector<ScanMetrics> scan_metrics;  // union over validation folds
    AggregateReport report;
    std::vector<std::int64_t> selected_iterations;  // per fold
};

// Patient-level cross-validation: trains per fold, selects the best curve
// iteration, evaluates the held-out scans, and writes fold outputs plus a
// pooled aggregate report under config.output_dir.
CvResult run_cv(const RunConfig& config, const CvOptions& opts = {});

// Single training run over every manifest record; the curve is evaluated on
// the training scans themselves.
TrainResult run_train(const RunConfig& config);

struct PredictOptions {
    bool skip_background_mask = false;
    std::optional<std::filesystem::path> body_mask_file;
    std::optional<std::pair<std::int64_t, std::int64_t>> pad_xy_target;
    bool ff_threshold_enabled = false;
};

// Writes <image stem>.pred.mvf for each input volume.
std::vector<std::filesystem::path> predict_files(const std::filesystem::path& checkpoint,
                                                 const std::vector<std::filesystem::path>& volumes,
                                                 const std::filesystem::path& out_dir, const PredictOptions& opts);

// Pairs manifest references with predictions named <image stem>.pred.mvf in
// pred_dir and writes scan_metrics.csv, aggregate.csv and scatter.csv.
AggregateReport evaluate_manifest(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir,
                                  const std::filesystem::path& out_dir);

}  // namespace fatseg
