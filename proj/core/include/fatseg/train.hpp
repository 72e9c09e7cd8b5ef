#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fatseg/checkpoint.hpp"
#include "fatseg/io.hpp"
#include "fatseg/net.hpp"
#include "fatseg/preprocess.hpp"

namespace fatseg {

enum class LossKind { CrossEntropy, Dice };

struct TrainConfig {
    double learning_rate = 1e-4;
    std::int64_t batch_size = 1;  // the training protocol fixes this to one
    std::int64_t iterations = 0;
    LossKind loss = LossKind::CrossEntropy;
    double dice_alpha = 0.1;
    bool dice_include_background = false;
    std::vector<double> class_weights;  // empty -> even weighting
    std::uint64_t seed = 0;
    std::int64_t eval_every = 1000;
    std::int64_t checkpoint_every = 1000;
};

struct FoldSplit {
    int fold = 0;
    std::vector<std::string> train_patients;
    std::vector<std::string> validation_patients;
};

// Patient-level partition into k near-equal groups (sizes differ by <= 1);
// both visits of a patient always land on the same side.
std::vector<FoldSplit> make_folds(const std::vector<ManifestRecord>& manifest, int k, std::uint64_t seed);

struct CurvePoint {
    std::int64_t iteration = 0;
    double dice_vat = 0;
    double dice_sat = 0;
    double loss = 0;  // mean training loss since the previous curve point
};

// Evaluated iteration maximizing mean validation dice over VAT and SAT;
// ties resolve to the earliest iteration.
std::int64_t select_checkpoint(const std::vector<CurvePoint>& curve);

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

// One scan, preprocessed for network consumption. `image` is the assembled
// [3, D, H, W] tensor after contrast adjustment, optional background
// masking and xy padding; labels stay on the original grid, with a padded
// copy for slice-wise training targets.
struct PreparedScan {
    ManifestRecord rec;
    Tensor<float> image;          // [3, D, H, W]
    LabelMask labels;             // original dims (empty labels => unlabeled)
    LabelMask labels_padded;      // dims matching image
    Volume original;              // unpadded, unmasked volume (fat fraction source)
    PadInfo pad;
    bool has_labels = false;
};

using EvalHook = std::function<std::pair<double, double>(std::int64_t iteration)>;
using CheckpointHook = std::function<void(std::int64_t iteration, const TrainerState& state)>;

struct TrainResult {
    std::vector<CurvePoint> curve;
    std::int64_t iterations_done = 0;
    bool diverged = false;
    TrainerState final_state;
};

// Batch-size-one loop over uniformly shuffled samples: slices for a 2D
// network, whole z-padded volumes for a 3D one. Emits curve points at
// eval_every (via on_eval) and checkpoints at checkpoint_every. A non-finite
// loss aborts the run with the last good checkpoint retained.
TrainResult train(Network<float>& net, const std::vector<const PreparedScan*>& train_scans, const TrainConfig& cfg,
                  const EvalHook& on_eval, const CheckpointHook& on_checkpoint);

}  // namespace fatseg
