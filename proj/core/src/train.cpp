#include "fatseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "fatseg/loss.hpp"
#include "fatseg/metrics.hpp"
#include "fatseg/optim.hpp"

namespace fatseg {

std::vector<FoldSplit> make_folds(const std::vector<ManifestRecord>& manifest, int k, std::uint64_t seed) {
    if (manifest.empty()) throw std::invalid_argument("make_folds: empty manifest");
    std::set<std::string> path_seen;
    for (const auto& r : manifest)
        if (!path_seen.insert(r.image_path.string()).second)
            throw std::invalid_argument("make_folds: duplicate scan path '" + r.image_path.string() + "'");

    std::vector<std::string> patients;
    std::set<std::string> seen;
    for (const auto& r : manifest)
        if (seen.insert(r.patient_id).second) patients.push_back(r.patient_id);
    std::sort(patients.begin(), patients.end());

    if (k < 1 || static_cast<std::size_t>(k) > patients.size())
        throw std::invalid_argument("make_folds: k=" + std::to_string(k) + " with " +
                                    std::to_string(patients.size()) + " patients");

    Rng rng(split_seed(seed, 5));
    rng.shuffle(patients);

    const std::size_t n = patients.size();
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);

    std::vector<FoldSplit> folds;
    std::size_t cursor = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        FoldSplit split;
        split.fold = f;
        split.validation_patients.assign(patients.begin() + static_cast<std::ptrdiff_t>(cursor),
                                         patients.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        cursor += size;
        for (const auto& p : patients)
            if (std::find(split.validation_patients.begin(), split.validation_patients.end(), p) ==
                split.validation_patients.end())
                split.train_patients.push_back(p);
        folds.push_back(std::move(split));
    }
    return folds;
}

std::int64_t select_checkpoint(const std::vector<CurvePoint>& curve) {
    if (curve.empty()) throw std::invalid_argument("select_checkpoint: empty curve");
    std::size_t best = 0;
    double best_score = (curve[0].dice_vat + curve[0].dice_sat) / 2.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double score = (curve[i].dice_vat + curve[i].dice_sat) / 2.0;
        if (score > best_score) {
            best_score = score;
            best = i;
        }
    }
    return curve[best].iteration;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << "iteration,dice_vat,dice_sat,loss\n";
    for (const auto& p : curve)
        os << p.iteration << "," << format_double(p.dice_vat) << "," << format_double(p.dice_sat) << ","
           << format_double(p.loss) << "\n";
}

namespace {

struct SampleRef {
    int scan;
    std::int64_t slice;  // -1 for a whole volume
};

}  // namespace

TrainResult train(Network<float>& net, const std::vector<const PreparedScan*>& train_scans, const TrainConfig& cfg,
                  const EvalHook& on_eval, const CheckpointHook& on_checkpoint) {
    if (train_scans.empty()) throw std::invalid_argument("train: empty training set");
    if (cfg.batch_size != 1) throw std::invalid_argument("train: the protocol fixes batch size to one");
    for (const auto* s : train_scans)
        if (!s->has_labels) throw std::invalid_argument("train: scan '" + s->rec.scan_id() + "' has no labels");

    const bool volumetric = net.spatial_rank() == 3;
    std::vector<SampleRef> samples;
    for (int i = 0; i < static_cast<int>(train_scans.size()); ++i) {
        if (volumetric) {
            samples.push_back({i, -1});
        } else {
            for (std::int64_t z = 0; z < train_scans[static_cast<std::size_t>(i)]->image.extent(1); ++z)
                samples.push_back({i, z});
        }
    }

    std::vector<std::pair<std::string, Tensor<float>>> params;
    net.visit_state([&](const std::string& path, Tensor<float>& t, ParamKind kind) {
        if (kind == ParamKind::Trainable) params.emplace_back(path, t);
    });

    TrainResult result;
    TrainerState& state = result.final_state;
    state.rng = Rng(split_seed(cfg.seed, 1));
    Rng dropout_rng(split_seed(cfg.seed, 2));
    const AdamConfig adam_cfg{cfg.learning_rate, 0.9, 0.999, 1e-8};
    const DiceLossParams dice_params{cfg.dice_alpha, cfg.dice_include_background};

    std::vector<SampleRef> order = samples;
    state.rng.shuffle(order);
    std::size_t cursor = 0;

    double window_loss = 0;
    std::int64_t window_n = 0;

    auto record_point = [&](std::int64_t iter) {
        const auto [dv, ds] = on_eval ? on_eval(iter) : std::pair<double, double>{0.0, 0.0};
        result.curve.push_back({iter, dv, ds, window_n > 0 ? window_loss / static_cast<double>(window_n) : 0.0});
        window_loss = 0;
        window_n = 0;
    };

    for (std::int64_t iter = 1; iter <= cfg.iterations; ++iter) {
        if (cursor >= order.size()) {
            state.rng.shuffle(order);
            cursor = 0;
        }
        const SampleRef ref = order[cursor++];
        const PreparedScan& scan = *train_scans[static_cast<std::size_t>(ref.scan)];

        Tensor<float> input;
        std::span<const std::uint8_t> target;
        const Shape& is = scan.image.shape();  // [3, D, H, W]
        if (ref.slice < 0) {
            input = Tensor<float>({1, is[0], is[1], is[2], is[3]});
            std::copy(scan.image.data().begin(), scan.image.data().end(), input.data().begin());
            target = scan.labels_padded.labels;
        } else {
            const std::int64_t hw = is[2] * is[3];
            input = Tensor<float>({1, is[0], is[2], is[3]});
            for (std::int64_t c = 0; c < is[0]; ++c) {
                auto src = scan.image.data().subspan(static_cast<std::size_t>((c * is[1] + ref.slice) * hw),
                                                     static_cast<std::size_t>(hw));
                std::copy(src.begin(), src.end(), input.data().begin() + c * hw);
            }
            target = std::span<const std::uint8_t>(scan.labels_padded.labels)
                         .subspan(static_cast<std::size_t>(ref.slice * hw), static_cast<std::size_t>(hw));
        }

        Tape<float> tape;
        ForwardOptions<float> opts{&tape, Mode::Train, &dropout_rng, nullptr};
        Tensor<float> scores = net.forward(input, opts);
        Tensor<float> loss;
        if (cfg.loss == LossKind::CrossEntropy) {
            loss = cross_entropy_loss(&tape, scores, target, cfg.class_weights);
        } else {
            Tensor<float> prob = softmax(&tape, scores, 1);
            loss = dice_loss(&tape, prob, target, dice_params);
        }
        const double loss_value = static_cast<double>(loss.data()[0]);
        if (!std::isfinite(loss_value)) {
            result.diverged = true;
            result.iterations_done = iter - 1;
            record_point(iter - 1);
            return result;
        }
        window_loss += loss_value;
        ++window_n;

        tape.backward(loss);
        state.iteration = iter;
        ++state.adam.step;
        for (auto& [path, t] : params) {
            adam_update<float>(t.data(), t.grad(), state.adam.slots[path], adam_cfg, state.adam.step, path);
            t.zero_grad();
        }

        const bool last = iter == cfg.iterations;
        if (cfg.eval_every > 0 && (iter % cfg.eval_every == 0 || last)) record_point(iter);
        if (on_checkpoint && cfg.checkpoint_every > 0 && (iter % cfg.checkpoint_every == 0 || last))
            on_checkpoint(iter, state);
    }
    if (cfg.iterations == 0 && on_checkpoint) on_checkpoint(0, state);
    result.iterations_done = cfg.iterations;
    return result;
}

}  // namespace fatseg
