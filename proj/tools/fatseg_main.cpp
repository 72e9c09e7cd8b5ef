// Command-line front end: batch phantom generation, training,
// cross-validation, prediction and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fatseg/phantom.hpp"
#include "fatseg/pipeline.hpp"

namespace {

struct PhantomArgs {
    fatseg::CohortParams cohort;
    std::string out;
    std::vector<std::int64_t> dims;  // depth height width
};

int cmd_phantom(const PhantomArgs& args) {
    fatseg::CohortParams params = args.cohort;
    if (!args.dims.empty()) {
        if (args.dims.size() != 3) throw std::runtime_error("--dims expects depth height width");
        params.base.dims = {args.dims[0], args.dims[1], args.dims[2]};
    }
    const auto records = fatseg::generate_cohort(params, args.out);
    std::printf("[phantom] patients=%lld visits=%lld scans=%zu out=%s\n",
                static_cast<long long>(params.patients), static_cast<long long>(params.visits), records.size(),
                args.out.c_str());
    return 0;
}

struct RunArgs {
    std::string config_path;
    std::string manifest, out, arch, loss;
    std::int64_t iterations = -1, base_channels = -1, eval_every = -1, checkpoint_every = -1;
    std::int64_t seed = -1;
    int folds = -1;
    int jobs = 1;
};

fatseg::RunConfig resolve_config(const RunArgs& args) {
    fatseg::RunConfig cfg = fatseg::RunConfig::load(args.config_path);
    if (!args.manifest.empty()) cfg.manifest = args.manifest;
    if (!args.out.empty()) cfg.output_dir = args.out;
    if (!args.arch.empty()) cfg.arch = args.arch;
    if (!args.loss.empty()) cfg.loss = args.loss;
    if (args.iterations >= 0) cfg.iterations = args.iterations;
    if (args.base_channels >= 0) cfg.base_channels = args.base_channels;
    if (args.eval_every >= 0) cfg.eval_every = args.eval_every;
    if (args.checkpoint_every >= 0) cfg.checkpoint_every = args.checkpoint_every;
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (args.folds >= 0) cfg.folds = args.folds;
    return cfg;
}

int cmd_train(const RunArgs& args) {
    const fatseg::RunConfig cfg = resolve_config(args);
    const fatseg::TrainResult tr = fatseg::run_train(cfg);
    std::printf("[train] iterations=%lld diverged=%d out=%s\n", static_cast<long long>(tr.iterations_done),
                tr.diverged ? 1 : 0, cfg.output_dir.string().c_str());
    return 0;
}

int cmd_cv(const RunArgs& args) {
    const fatseg::RunConfig cfg = resolve_config(args);
    const fatseg::CvResult res = fatseg::run_cv(cfg, {args.jobs});
    for (std::size_t f = 0; f < res.selected_iterations.size(); ++f)
        std::printf("[cv] fold=%zu selected_iteration=%lld\n", f,
                    static_cast<long long>(res.selected_iterations[f]));
    std::printf("[cv] scans=%zu dice_vat=%s dice_sat=%s out=%s\n", res.scan_metrics.size(),
                fatseg::format_double(res.report.all.vat.dice.mean).c_str(),
                fatseg::format_double(res.report.all.sat.dice.mean).c_str(), cfg.output_dir.string().c_str());
    return 0;
}

struct PredictArgs {
    std::string checkpoint, out, manifest, body_mask;
    std::vector<std::string> inputs;
    std::vector<std::int64_t> pad_xy;
    bool skip_background_mask = false;
    bool ff_threshold = false;
};

int cmd_predict(const PredictArgs& args) {
    std::vector<std::filesystem::path> volumes;
    for (const auto& p : args.inputs) volumes.emplace_back(p);
    if (!args.manifest.empty())
        for (const auto& r : fatseg::load_manifest(args.manifest)) volumes.push_back(r.image_path);
    if (volumes.empty()) throw std::runtime_error("predict: no inputs (use --input or --manifest)");

    fatseg::PredictOptions opts;
    opts.skip_background_mask = args.skip_background_mask;
    opts.ff_threshold_enabled = args.ff_threshold;
    if (!args.body_mask.empty()) opts.body_mask_file = args.body_mask;
    if (!args.pad_xy.empty()) {
        if (args.pad_xy.size() != 2) throw std::runtime_error("--pad-xy expects height width");
        opts.pad_xy_target = {{args.pad_xy[0], args.pad_xy[1]}};
    }
    const auto written = fatseg::predict_files(args.checkpoint, volumes, args.out, opts);
    for (const auto& w : written) std::printf("[predict] wrote %s\n", w.string().c_str());
    return 0;
}

int cmd_evaluate(const std::string& manifest, const std::string& pred_dir, const std::string& out) {
    const fatseg::AggregateReport report = fatseg::evaluate_manifest(manifest, pred_dir, out);
    std::printf("[evaluate] scans=%lld dice_vat=%s dice_sat=%s out=%s\n",
                static_cast<long long>(report.all.scans), fatseg::format_double(report.all.vat.dice.mean).c_str(),
                fatseg::format_double(report.all.sat.dice.mean).c_str(), out.c_str());
    return 0;
}

int cmd_report(const std::string& scan_metrics, const std::string& out) {
    const auto metrics = fatseg::read_scan_metrics_csv(scan_metrics);
    const fatseg::AggregateReport report = fatseg::aggregate(metrics);
    std::filesystem::create_directories(out);
    fatseg::write_aggregate_csv(std::filesystem::path(out) / "aggregate.csv", report);
    fatseg::write_scatter_csv(std::filesystem::path(out) / "scatter.csv", report);
    std::printf("[report] scans=%lld out=%s\n", static_cast<long long>(report.all.scans), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VAT/SAT segmentation engine for water-fat MRI volumes"};
    app.require_subcommand(1);

    PhantomArgs ph;
    auto* sp = app.add_subcommand("phantom", "Generate a synthetic phantom cohort with ground-truth labels");
    sp->add_option("--patients", ph.cohort.patients, "Number of patients")->capture_default_str();
    sp->add_option("--visits", ph.cohort.visits, "Visits per patient")->capture_default_str();
    sp->add_option("--seed", ph.cohort.seed, "Cohort seed")->capture_default_str();
    sp->add_option("--out", ph.out, "Output directory")->required();
    sp->add_option("--center", ph.cohort.center_tag, "Center tag written to the manifest")->capture_default_str();
    sp->add_option("--dims", ph.dims, "Grid size: depth height width")->expected(3);
    sp->add_option("--body-rx", ph.cohort.base.body_rx, "Body semi-axis fraction (x)")->capture_default_str();
    sp->add_option("--body-ry", ph.cohort.base.body_ry, "Body semi-axis fraction (y)")->capture_default_str();
    sp->add_option("--skin-thickness", ph.cohort.base.skin_thickness, "Lean rim outside the SAT ring (fraction)")
        ->capture_default_str();
    sp->add_option("--sat-thickness-min", ph.cohort.base.sat_thickness_min, "SAT ring thickness (min fraction)")
        ->capture_default_str();
    sp->add_option("--sat-thickness-max", ph.cohort.base.sat_thickness_max, "SAT ring thickness (max fraction)")
        ->capture_default_str();
    sp->add_option("--vat-blobs-min", ph.cohort.base.vat_blob_min, "VAT blob count (min)")->capture_default_str();
    sp->add_option("--vat-blobs-max", ph.cohort.base.vat_blob_max, "VAT blob count (max)")->capture_default_str();
    sp->add_option("--vat-size-min", ph.cohort.base.vat_size_min, "VAT blob size fraction (min)")
        ->capture_default_str();
    sp->add_option("--vat-size-max", ph.cohort.base.vat_size_max, "VAT blob size fraction (max)")
        ->capture_default_str();
    sp->add_option("--spine-radius", ph.cohort.base.spine_radius, "Spine disk radius fraction")
        ->capture_default_str();
    sp->add_option("--spine-offset", ph.cohort.base.spine_offset, "Spine posterior offset fraction")
        ->capture_default_str();
    sp->add_option("--signal-noise", ph.cohort.base.signal_noise, "Signal noise sigma")->capture_default_str();
    sp->add_option("--background-noise", ph.cohort.base.background_noise, "Background noise sigma")
        ->capture_default_str();
    sp->add_flag("--noisy-background", ph.cohort.base.include_background_noise,
                 "Fill the background with noisy fat-fraction values");

    RunArgs train_args, cv_args;
    auto add_run_options = [](CLI::App* cmd, RunArgs& a, bool with_folds) {
        cmd->add_option("--config", a.config_path, "Run configuration file")->required();
        cmd->add_option("--manifest", a.manifest, "Override: manifest path");
        cmd->add_option("--out", a.out, "Override: output directory");
        cmd->add_option("--arch", a.arch, "Override: unet|vnet");
        cmd->add_option("--loss", a.loss, "Override: cross_entropy|dice");
        cmd->add_option("--iterations", a.iterations, "Override: training iterations");
        cmd->add_option("--base-channels", a.base_channels, "Override: base channel count");
        cmd->add_option("--eval-every", a.eval_every, "Override: evaluation cadence");
        cmd->add_option("--checkpoint-every", a.checkpoint_every, "Override: checkpoint cadence");
        cmd->add_option("--seed", a.seed, "Override: seed");
        if (with_folds) cmd->add_option("--folds", a.folds, "Override: fold count");
    };
    auto* st = app.add_subcommand("train", "Train one network on every manifest scan");
    add_run_options(st, train_args, false);
    auto* scv = app.add_subcommand("cv", "Patient-level k-fold cross-validation");
    add_run_options(scv, cv_args, true);
    scv->add_option("--jobs", cv_args.jobs, "Parallel fold workers")->capture_default_str();

    PredictArgs pr;
    auto* spr = app.add_subcommand("predict", "Segment volumes with a trained checkpoint");
    spr->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
    spr->add_option("--input", pr.inputs, "Input volume (repeatable)");
    spr->add_option("--manifest", pr.manifest, "Predict every image of a manifest");
    spr->add_option("--out", pr.out, "Output directory")->required();
    spr->add_option("--body-mask", pr.body_mask, "Explicit body mask for a single input");
    spr->add_option("--pad-xy", pr.pad_xy, "Force xy padding target: height width")->expected(2);
    spr->add_flag("--skip-background-mask", pr.skip_background_mask,
                  "Do not apply body masks before inference (robustness experiment)");
    spr->add_flag("--ff-threshold", pr.ff_threshold,
                  "Reset predicted depot labels to background where fat fraction < 0.5");

    std::string ev_manifest, ev_pred, ev_out;
    auto* sev = app.add_subcommand("evaluate", "Compare predictions against reference labels");
    sev->add_option("--manifest", ev_manifest, "Manifest with reference labels")->required();
    sev->add_option("--pred-dir", ev_pred, "Directory holding <stem>.pred.mvf files")->required();
    sev->add_option("--out", ev_out, "Output directory")->required();

    std::string rp_metrics, rp_out;
    auto* srp = app.add_subcommand("report", "Re-aggregate per-scan metrics rows");
    srp->add_option("--scan-metrics", rp_metrics, "scan_metrics.csv produced by evaluate or cv")->required();
    srp->add_option("--out", rp_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sp->parsed()) return cmd_phantom(ph);
        if (st->parsed()) return cmd_train(train_args);
        if (scv->parsed()) return cmd_cv(cv_args);
        if (spr->parsed()) return cmd_predict(pr);
        if (sev->parsed()) return cmd_evaluate(ev_manifest, ev_pred, ev_out);
        if (srp->parsed()) return cmd_report(rp_metrics, rp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
