#include "fatseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fatseg/loss.hpp"
#include "fatseg/preprocess.hpp"

namespace fatseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const std::int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw std::runtime_error("config: value '" + v + "' for key '" + key + "' is not an integer");
    }
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (const std::exception&) {
        throw std::runtime_error("config: value '" + v + "' for key '" + key + "' is not a number");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: value '" + v + "' for key '" + key + "' is not a boolean");
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path.string() + "'");
    RunConfig cfg;
    const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto resolve = [&](const std::string& p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        if (key == "arch") {
            if (value != "unet" && value != "vnet")
                throw std::runtime_error("config: arch must be unet or vnet, got '" + value + "'");
            cfg.arch = value;
        } else if (key == "base_channels") {
            cfg.base_channels = parse_int(value, key);
        } else if (key == "iterations") {
            cfg.iterations = parse_int(value, key);
        } else if (key == "learning_rate") {
            cfg.learning_rate = parse_double(value, key);
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(parse_int(value, key));
        } else if (key == "loss") {
            if (value != "cross_entropy" && value != "dice")
                throw std::runtime_error("config: loss must be cross_entropy or dice, got '" + value + "'");
            cfg.loss = value;
        } else if (key == "alpha") {
            cfg.alpha = parse_double(value, key);
        } else if (key == "folds") {
            cfg.folds = static_cast<int>(parse_int(value, key));
        } else if (key == "manifest") {
            cfg.manifest = resolve(value);
        } else if (key == "output_dir") {
            cfg.output_dir = resolve(value);
        } else if (key == "eval_every") {
            cfg.eval_every = parse_int(value, key);
        } else if (key == "checkpoint_every") {
            cfg.checkpoint_every = parse_int(value, key);
        } else if (key == "ff_threshold_enabled") {
            cfg.ff_threshold_enabled = parse_bool(value, key);
        } else {
            throw std::runtime_error("config: line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    return cfg;
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open '" + path.string() + "' for writing");
    os << "arch = " << arch << "\n";
    os << "base_channels = " << resolved_base_channels() << "\n";
    os << "iterations = " << resolved_iterations() << "\n";
    os << "learning_rate = " << format_double(learning_rate) << "\n";
    os << "seed = " << seed << "\n";
    os << "loss = " << resolved_loss() << "\n";
    os << "alpha = " << format_double(alpha) << "\n";
    os << "folds = " << folds << "\n";
    os << "manifest = " << manifest.string() << "\n";
    os << "output_dir = " << output_dir.string() << "\n";
    os << "eval_every = " << eval_every << "\n";
    os << "checkpoint_every = " << checkpoint_every << "\n";
    os << "ff_threshold_enabled = " << (ff_threshold_enabled ? "true" : "false") << "\n";
}

NetSpec RunConfig::make_net_spec() const {
    if (arch == "unet") {
        UNetSpec s;
        s.base_channels = resolved_base_channels();
        return s;
    }
    VNetSpec s;
    s.base_channels = resolved_base_channels();
    return s;
}

TrainConfig RunConfig::make_train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.iterations = resolved_iterations();
    t.loss = resolved_loss() == "dice" ? LossKind::Dice : LossKind::CrossEntropy;
    t.dice_alpha = alpha;
    t.seed = seed;
    t.eval_every = eval_every;
    t.checkpoint_every = checkpoint_every;
    return t;
}

PreparedScan prepare_volume(const Volume& v, const LabelMask* labels, const LabelMask* body_mask,
                            const PrepareOptions& opts) {
    PreparedScan scan;
    scan.original = v;

    Volume work = v;
    if (body_mask != nullptr) mask_background(work, *body_mask);
    contrast_adjust_signal_channels(work);

    std::int64_t th, tw;
    if (opts.pad_xy_target) {
        th = opts.pad_xy_target->first;
        tw = opts.pad_xy_target->second;
    } else {
        const std::int64_t m = opts.pad_multiple;
        th = (work.dims().height + m - 1) / m * m;
        tw = (work.dims().width + m - 1) / m * m;
    }
    Volume padded = pad_xy(work, th, tw, scan.pad);
    if (labels != nullptr) {
        if (!(labels->dims == v.dims()))
            throw std::invalid_argument("prepare: label dims " + labels->dims.str() + " do not match volume dims " +
                                        v.dims().str());
        scan.labels = *labels;
        PadInfo ignored;
        scan.labels_padded = pad_xy(*labels, th, tw, ignored);
        scan.has_labels = true;
    }
    if (opts.volumetric) {
        padded = pad_slices(padded, opts.input_depth, scan.pad);
        if (scan.has_labels) {
            PadInfo ignored;
            scan.labels_padded = pad_slices(scan.labels_padded, opts.input_depth, ignored);
        }
    }

    scan.image = Tensor<float>({padded.channels(), padded.dims().depth, padded.dims().height, padded.dims().width});
    std::copy(padded.data().begin(), padded.data().end(), scan.image.data().begin());
    return scan;
}

PreparedScan prepare_scan(const ManifestRecord& rec, const PrepareOptions& opts) {
    const Volume v = read_volume(rec.image_path);
    std::optional<LabelMask> labels;
    if (opts.load_labels) labels = read_label_mask(rec.label_path);

    std::optional<LabelMask> body;
    if (opts.apply_body_mask) {
        if (opts.body_mask_file) {
            body = read_label_mask(*opts.body_mask_file);  // explicit path must exist
        } else {
            const std::filesystem::path bp = body_mask_path(rec.image_path);
            if (std::filesystem::exists(bp)) body = read_label_mask(bp);
        }
    }
    PreparedScan scan = prepare_volume(v, labels ? &*labels : nullptr, body ? &*body : nullptr, opts);
    scan.rec = rec;
    return scan;
}

Tensor<float> forward_scores(Network<float>& net, const PreparedScan& scan) {
    const Shape& is = scan.image.shape();  // [3, D, H, W]
    ForwardOptions<float> opts;            // eval mode, no tape
    if (net.spatial_rank() == 3) {
        Tensor<float> input({1, is[0], is[1], is[2], is[3]});
        std::copy(scan.image.data().begin(), scan.image.data().end(), input.data().begin());
        Tensor<float> out = net.forward(input, opts);
        return out.reshape({out.extent(1), out.extent(2), out.extent(3), out.extent(4)});
    }
    const std::int64_t hw = is[2] * is[3];
    Tensor<float> scores;
    for (std::int64_t z = 0; z < is[1]; ++z) {
        Tensor<float> input({1, is[0], is[2], is[3]});
        for (std::int64_t c = 0; c < is[0]; ++c) {
            auto src = scan.image.data().subspan(static_cast<std::size_t>((c * is[1] + z) * hw),
                                                 static_cast<std::size_t>(hw));
            std::copy(src.begin(), src.end(), input.data().begin() + c * hw);
        }
        Tensor<float> out = net.forward(input, opts);  // [1, C, H, W]
        if (!scores.defined()) scores = Tensor<float>({out.extent(1), is[1], is[2], is[3]});
        for (std::int64_t c = 0; c < out.extent(1); ++c) {
            auto src = out.data().subspan(static_cast<std::size_t>(c * hw), static_cast<std::size_t>(hw));
            std::copy(src.begin(), src.end(), scores.data().begin() + (c * is[1] + z) * hw);
        }
    }
    return scores;
}

namespace {

// argmax over the class axis of [C, D, H, W]; first maximum wins ties
LabelMask argmax_mask(const Tensor<float>& scores, const Spacing& spacing) {
    const std::int64_t klass = scores.extent(0);
    const VolDims dims{scores.extent(1), scores.extent(2), scores.extent(3)};
    const std::int64_t n = dims.numel();
    LabelMask mask(dims, spacing);
    auto s = scores.data();
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint8_t best = 0;
        float best_v = s[static_cast<std::size_t>(i)];
        for (std::int64_t c = 1; c < klass; ++c) {
            const float v = s[static_cast<std::size_t>(c * n + i)];
            if (v > best_v) {
                best_v = v;
                best = static_cast<std::uint8_t>(c);
            }
        }
        mask.labels[static_cast<std::size_t>(i)] = best;
    }
    return mask;
}

Tensor<float> crop_scores(const Tensor<float>& scores, const PadInfo& pad) {
    Tensor<float> t = scores;
    if (pad.z_pad > 0) t = narrow(t, 1, 0, pad.original.depth);
    if (pad.top + pad.bottom > 0) t = narrow(t, 2, pad.top, pad.original.height);
    if (pad.left + pad.right > 0) t = narrow(t, 3, pad.left, pad.original.width);
    return t;
}

}  // namespace

LabelMask mask_from_scores_crop_first(const Tensor<float>& scores, const PadInfo& pad, const Spacing& spacing) {
    return argmax_mask(crop_scores(scores, pad), spacing);
}

LabelMask mask_from_scores_argmax_first(const Tensor<float>& scores, const PadInfo& pad, const Spacing& spacing) {
    LabelMask full = argmax_mask(scores, spacing);
    PadInfo crop = pad;
    LabelMask out(crop.original, spacing);
    for (std::int64_t z = 0; z < crop.original.depth; ++z)
        for (std::int64_t y = 0; y < crop.original.height; ++y)
            for (std::int64_t x = 0; x < crop.original.width; ++x)
                out.at(z, y, x) = full.at(z, y + crop.top, x + crop.left);
    return out;
}

LabelMask predict_mask(Network<float>& net, const PreparedScan& scan, bool apply_ff_threshold) {
    const Tensor<float> scores = forward_scores(net, scan);
    LabelMask mask = mask_from_scores_crop_first(scores, scan.pad, scan.original.spacing());
    if (apply_ff_threshold) mask = ff_threshold(mask, scan.original);
    return mask;
}

namespace {

PrepareOptions prepare_options_for(const RunConfig& config) {
    PrepareOptions opts;
    opts.volumetric = config.arch == "vnet";
    return opts;
}

std::pair<double, double> mean_validation_dice(Network<float>& net, const std::vector<const PreparedScan*>& scans,
                                               bool ff_enabled) {
    double vat = 0, sat = 0;
    for (const auto* s : scans) {
        const LabelMask pred = predict_mask(net, *s, ff_enabled);
        vat += dice(pred, s->labels, LabelMask::kVat);
        sat += dice(pred, s->labels, LabelMask::kSat);
    }
    const double n = static_cast<double>(scans.size());
    return {vat / n, sat / n};
}

struct FoldOutput {
    std::vector<ScanMetrics> metrics;
    std::int64_t selected_iteration = 0;
};

FoldOutput run_fold(const RunConfig& config, const FoldSplit& fold, const std::vector<PreparedScan>& scans,
                    const std::filesystem::path& fold_dir) {
    std::filesystem::create_directories(fold_dir);

    std::vector<const PreparedScan*> train_set, val_set;
    for (const auto& s : scans) {
        const auto& vp = fold.validation_patients;
        if (std::find(vp.begin(), vp.end(), s.rec.patient_id) != vp.end())
            val_set.push_back(&s);
        else
            train_set.push_back(&s);
    }
    if (train_set.empty() || val_set.empty())
        throw std::runtime_error("cv: fold " + std::to_string(fold.fold) + " has an empty train or validation side");

    const std::uint64_t fold_seed = split_seed(config.seed, 100 + static_cast<std::uint64_t>(fold.fold));
    Rng init_rng(split_seed(fold_seed, 0));
    auto net = build_network<float>(config.make_net_spec(), init_rng);

    TrainConfig tc = config.make_train_config();
    tc.seed = fold_seed;
    tc.checkpoint_every = tc.eval_every;  // select_checkpoint needs one checkpoint per curve point

    std::ofstream log(fold_dir / "train.log");
    const EvalHook on_eval = [&](std::int64_t iter) {
        const auto [dv, ds] = mean_validation_dice(*net, val_set, config.ff_threshold_enabled);
        log << "iter=" << iter << " dice_vat=" << format_double(dv) << " dice_sat=" << format_double(ds) << "\n";
        log.flush();
        return std::pair<double, double>{dv, ds};
    };
    const CheckpointHook on_ckpt = [&](std::int64_t iter, const TrainerState& state) {
        save_checkpoint(fold_dir / ("ck_" + std::to_string(iter) + ".ckpt"), *net, state);
    };

    const TrainResult tr = train(*net, train_set, tc, on_eval, on_ckpt);
    write_curve_csv(fold_dir / "curve.csv", tr.curve);
    if (tr.diverged)
        throw std::runtime_error("cv: fold " + std::to_string(fold.fold) + " diverged at iteration " +
                                 std::to_string(tr.iterations_done) + "; last good checkpoint retained in " +
                                 fold_dir.string());

    FoldOutput out;
    out.selected_iteration = select_checkpoint(tr.curve);
    const std::filesystem::path chosen = fold_dir / ("ck_" + std::to_string(out.selected_iteration) + ".ckpt");
    LoadedCheckpoint best = load_checkpoint(chosen);

    for (const auto* s : val_set) {
        const LabelMask pred = predict_mask(*best.net, *s, config.ff_threshold_enabled);
        out.metrics.push_back(evaluate_scan(s->rec.scan_id(), s->rec.center_tag, pred, s->labels));
    }
    write_scan_metrics_csv(fold_dir / "report.csv", out.metrics);

    std::filesystem::rename(chosen, fold_dir / "selected.ckpt");
    for (const auto& e : std::filesystem::directory_iterator(fold_dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("ck_", 0) == 0) std::filesystem::remove(e.path());
    }
    log << "selected_iteration=" << out.selected_iteration << "\n";
    return out;
}

}  // namespace

CvResult run_cv(const RunConfig& config, const CvOptions& cv_opts) {
    if (config.manifest.empty() || config.output_dir.empty())
        throw std::runtime_error("cv: config must set manifest and output_dir");
    std::filesystem::create_directories(config.output_dir);
    config.save(config.output_dir / "resolved.cfg");

    const std::vector<ManifestRecord> records = load_manifest(config.manifest);
    const std::vector<FoldSplit> folds = make_folds(records, config.folds, config.seed);

    const PrepareOptions popts = prepare_options_for(config);
    std::vector<PreparedScan> scans;
    scans.reserve(records.size());
    for (const auto& r : records) scans.push_back(prepare_scan(r, popts));

    std::vector<FoldOutput> outputs(folds.size());
    std::vector<std::string> failures(folds.size());
    const int jobs = std::max(1, cv_opts.jobs);
    std::size_t next = 0;
    std::mutex mu;
    auto worker = [&]() {
        for (;;) {
            std::size_t f;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= folds.size()) return;
                f = next++;
            }
            try {
                outputs[f] = run_fold(config, folds[f], scans,
                                      config.output_dir / ("fold" + std::to_string(folds[f].fold)));
            } catch (const std::exception& e) {
                failures[f] = e.what();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (std::size_t f = 0; f < folds.size(); ++f)
        if (!failures[f].empty())
            throw std::runtime_error("cv: fold " + std::to_string(folds[f].fold) + " failed: " + failures[f] +
                                     " (partial outputs retained in " + config.output_dir.string() + ")");

    CvResult result;
    for (auto& out : outputs) {
        result.selected_iterations.push_back(out.selected_iteration);
        for (auto& m : out.metrics) result.scan_metrics.push_back(std::move(m));
    }
    result.report = aggregate(result.scan_metrics);
    write_scan_metrics_csv(config.output_dir / "scan_metrics.csv", result.scan_metrics);
    write_aggregate_csv(config.output_dir / "aggregate.csv", result.report);
    write_scatter_csv(config.output_dir / "scatter.csv", result.report);
    return result;
}

TrainResult run_train(const RunConfig& config) {
    if (config.manifest.empty() || config.output_dir.empty())
        throw std::runtime_error("train: config must set manifest and output_dir");
    std::filesystem::create_directories(config.output_dir);
    config.save(config.output_dir / "resolved.cfg");

    const std::vector<ManifestRecord> records = load_manifest(config.manifest);
    const PrepareOptions popts = prepare_options_for(config);
    std::vector<PreparedScan> scans;
    for (const auto& r : records) scans.push_back(prepare_scan(r, popts));
    std::vector<const PreparedScan*> all;
    for (const auto& s : scans) all.push_back(&s);

    Rng init_rng(split_seed(config.seed, 0));
    auto net = build_network<float>(config.make_net_spec(), init_rng);
    TrainConfig tc = config.make_train_config();

    std::ofstream log(config.output_dir / "train.log");
    const EvalHook on_eval = [&](std::int64_t iter) {
        const auto [dv, ds] = mean_validation_dice(*net, all, config.ff_threshold_enabled);
        log << "iter=" << iter << " dice_vat=" << format_double(dv) << " dice_sat=" << format_double(ds) << "\n";
        log.flush();
        return std::pair<double, double>{dv, ds};
    };
    const CheckpointHook on_ckpt = [&](std::int64_t iter, const TrainerState& state) {
        save_checkpoint(config.output_dir / ("ck_" + std::to_string(iter) + ".ckpt"), *net, state);
    };
    const TrainResult tr = train(*net, all, tc, on_eval, on_ckpt);
    write_curve_csv(config.output_dir / "curve.csv", tr.curve);
    save_checkpoint(config.output_dir / "final.ckpt", *net, tr.final_state);
    if (tr.diverged)
        throw std::runtime_error("train: loss diverged at iteration " + std::to_string(tr.iterations_done) +
                                 "; last good checkpoint retained in " + config.output_dir.string());
    return tr;
}

std::vector<std::filesystem::path> predict_files(const std::filesystem::path& checkpoint,
                                                 const std::vector<std::filesystem::path>& volumes,
                                                 const std::filesystem::path& out_dir, const PredictOptions& opts) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    std::filesystem::create_directories(out_dir);

    PrepareOptions popts;
    popts.apply_body_mask = !opts.skip_background_mask;
    popts.body_mask_file = opts.body_mask_file;
    popts.pad_xy_target = opts.pad_xy_target;
    popts.volumetric = ck.net->spatial_rank() == 3;
    if (popts.volumetric) popts.input_depth = std::get<VNetSpec>(ck.net->spec()).input_depth;
    popts.load_labels = false;

    std::vector<std::filesystem::path> written;
    for (const auto& vol_path : volumes) {
        ManifestRecord rec;
        rec.image_path = vol_path;
        PreparedScan scan = prepare_scan(rec, popts);
        const LabelMask pred = predict_mask(*ck.net, scan, opts.ff_threshold_enabled);
        std::filesystem::path out = out_dir / vol_path.filename();
        out.replace_extension(".pred.mvf");
        write_volume(out, pred);
        written.push_back(std::move(out));
    }
    return written;
}

AggregateReport evaluate_manifest(const std::filesystem::path& manifest, const std::filesystem::path& pred_dir,
                                  const std::filesystem::path& out_dir) {
    const std::vector<ManifestRecord> records = load_manifest(manifest);
    std::filesystem::create_directories(out_dir);

    std::vector<ScanMetrics> metrics;
    for (const auto& r : records) {
        std::filesystem::path pred_path = pred_dir / r.image_path.filename();
        pred_path.replace_extension(".pred.mvf");
        if (!std::filesystem::exists(pred_path))
            throw std::runtime_error("evaluate: missing prediction '" + pred_path.string() + "'");
        const LabelMask pred = read_label_mask(pred_path);
        const LabelMask ref = read_label_mask(r.label_path);
        metrics.push_back(evaluate_scan(r.scan_id(), r.center_tag, pred, ref));
    }
    const AggregateReport report = aggregate(metrics);
    write_scan_metrics_csv(out_dir / "scan_metrics.csv", metrics);
    write_aggregate_csv(out_dir / "aggregate.csv", report);
    write_scatter_csv(out_dir / "scatter.csv", report);
    return report;
}

}  // namespace fatseg
