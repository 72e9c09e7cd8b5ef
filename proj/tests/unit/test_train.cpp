#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "fatseg/phantom.hpp"
#include "fatseg/pipeline.hpp"
#include "fatseg/train.hpp"

using namespace fatseg;

namespace {

std::vector<ManifestRecord> synthetic_manifest(int patients, int visits) {
    std::vector<ManifestRecord> records;
    for (int p = 1; p <= patients; ++p)
        for (int v = 1; v <= visits; ++v) {
            ManifestRecord r;
            r.patient_id = "p" + std::to_string(p);
            r.visit = v;
            r.image_path = "img/" + r.patient_id + "_v" + std::to_string(v) + ".mvf";
            r.label_path = "lab/" + r.patient_id + "_v" + std::to_string(v) + ".mvf";
            r.center_tag = "uppsala";
            records.push_back(std::move(r));
        }
    return records;
}

}  // namespace

TEST_CASE("make_folds: 45 patients into 10 near-equal patient-level folds") {
    const auto manifest = synthetic_manifest(45, 2);
    const auto folds = make_folds(manifest, 10, 123);
    REQUIRE(folds.size() == 10);

    std::multiset<std::size_t> sizes;
    std::set<std::string> all_validation;
    for (const auto& f : folds) {
        sizes.insert(f.validation_patients.size());
        for (const auto& p : f.validation_patients) CHECK(all_validation.insert(p).second);  // no reuse
        CHECK(f.train_patients.size() + f.validation_patients.size() == 45);
    }
    CHECK(all_validation.size() == 45);
    CHECK(sizes.count(5) == 5);
    CHECK(sizes.count(4) == 5);

    // every scan appears exactly once on the validation side
    std::size_t validated_scans = 0;
    for (const auto& f : folds)
        for (const auto& r : manifest)
            if (std::find(f.validation_patients.begin(), f.validation_patients.end(), r.patient_id) !=
                f.validation_patients.end())
                ++validated_scans;
    CHECK(validated_scans == 90);
}

TEST_CASE("make_folds: leave-one-patient-out when k equals the patient count") {
    const auto manifest = synthetic_manifest(7, 2);
    const auto folds = make_folds(manifest, 7, 9);
    REQUIRE(folds.size() == 7);
    for (const auto& f : folds) CHECK(f.validation_patients.size() == 1);
}

TEST_CASE("make_folds: duplicate scan paths and oversized k are rejected") {
    auto manifest = synthetic_manifest(4, 1);
    CHECK_THROWS_AS(make_folds(manifest, 5, 0), std::invalid_argument);
    manifest.push_back(manifest.front());
    CHECK_THROWS_WITH_AS(make_folds(manifest, 2, 0), doctest::Contains("duplicate scan path"),
                         std::invalid_argument);
}

TEST_CASE("make_folds: deterministic under seed, varies across seeds") {
    const auto manifest = synthetic_manifest(12, 2);
    const auto a = make_folds(manifest, 4, 5);
    const auto b = make_folds(manifest, 4, 5);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].validation_patients == b[i].validation_patients);
    const auto c = make_folds(manifest, 4, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].validation_patients != c[i].validation_patients;
    CHECK(any_diff);
}

TEST_CASE("select_checkpoint: last on a rising curve, the peak otherwise") {
    std::vector<CurvePoint> rising{{100, 0.5, 0.5, 1}, {200, 0.6, 0.6, 1}, {300, 0.7, 0.7, 1}};
    CHECK(select_checkpoint(rising) == 300);

    std::vector<CurvePoint> single{{42, 0.9, 0.8, 1}};
    CHECK(select_checkpoint(single) == 42);

    std::vector<CurvePoint> peaked{{100, 0.5, 0.5, 1}, {200, 0.9, 0.95, 1}, {300, 0.7, 0.7, 1}};
    CHECK(select_checkpoint(peaked) == 200);

    // ties resolve to the earliest evaluated iteration
    std::vector<CurvePoint> tied{{100, 0.8, 0.8, 1}, {200, 0.8, 0.8, 1}};
    CHECK(select_checkpoint(tied) == 100);

    CHECK_THROWS_AS(select_checkpoint({}), std::invalid_argument);
}

namespace {

struct TinySetup {
    std::vector<PreparedScan> scans;
    std::vector<const PreparedScan*> refs;

    TinySetup() {
        for (int i = 0; i < 2; ++i) {
            PhantomParams pp;
            pp.seed = 50 + std::uint64_t(i);
            pp.dims = {4, 16, 16};
            const Phantom ph = generate_phantom(pp);
            PrepareOptions opts;
            scans.push_back(prepare_volume(ph.volume, &ph.labels, &ph.body_mask, opts));
            scans.back().rec.patient_id = "p" + std::to_string(i);
            scans.back().rec.visit = 1;
        }
        for (const auto& s : scans) refs.push_back(&s);
    }
};

std::vector<float> param_bytes(Network<float>& net) {
    std::vector<float> out;
    net.visit_state([&](const std::string&, Tensor<float>& t, ParamKind) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    });
    return out;
}

}  // namespace

TEST_CASE("train: zero iterations returns the initialization untouched") {
    TinySetup setup;
    UNetSpec spec;
    spec.base_channels = 2;
    Rng rng(7);
    auto net = build_unet<float>(spec, rng);
    const auto before = param_bytes(*net);

    TrainConfig cfg;
    cfg.iterations = 0;
    bool checkpointed = false;
    const auto result = train(*net, setup.refs, cfg, nullptr, [&](std::int64_t iter, const TrainerState&) {
        CHECK(iter == 0);
        checkpointed = true;
    });
    CHECK(checkpointed);
    CHECK(result.iterations_done == 0);
    CHECK(param_bytes(*net) == before);
}

TEST_CASE("train: identical seeds produce bit-identical checkpoint bytes") {
    const auto dir = std::filesystem::temp_directory_path();
    auto run = [&](const std::filesystem::path& out) {
        TinySetup setup;
        UNetSpec spec;
        spec.base_channels = 2;
        Rng rng(split_seed(99, 0));
        auto net = build_unet<float>(spec, rng);
        TrainConfig cfg;
        cfg.iterations = 12;
        cfg.seed = 99;
        cfg.eval_every = 0;
        cfg.checkpoint_every = 0;
        const auto result = train(*net, setup.refs, cfg, nullptr, nullptr);
        CHECK(!result.diverged);
        save_checkpoint(out, *net, result.final_state);
    };
    run(dir / "fatseg_det_a.ckpt");
    run(dir / "fatseg_det_b.ckpt");

    std::ifstream fa(dir / "fatseg_det_a.ckpt", std::ios::binary), fb(dir / "fatseg_det_b.ckpt", std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
    CHECK(!a.empty());
    std::filesystem::remove(dir / "fatseg_det_a.ckpt");
    std::filesystem::remove(dir / "fatseg_det_b.ckpt");
}

TEST_CASE("train: a few iterations reduce the loss on a fixed sample set") {
    TinySetup setup;
    UNetSpec spec;
    spec.base_channels = 4;
    Rng rng(13);
    auto net = build_unet<float>(spec, rng);
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.seed = 13;
    cfg.eval_every = 20;
    cfg.checkpoint_every = 0;
    cfg.learning_rate = 1e-3;
    const auto result = train(*net, setup.refs, cfg, nullptr, nullptr);
    REQUIRE(result.curve.size() >= 3);
    CHECK(result.curve.back().loss < result.curve.front().loss);
}
