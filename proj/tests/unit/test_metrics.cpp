#include <doctest.h>

#include <algorithm>

#include "fatseg/metrics.hpp"
#include "fatseg/rng.hpp"

using namespace fatseg;

namespace {

LabelMask mask_of(VolDims dims, const std::vector<std::uint8_t>& labels, Spacing sp = {2.07f, 2.07f, 8.0f}) {
    LabelMask m(dims, sp);
    m.labels = labels;
    return m;
}

}  // namespace

TEST_CASE("dice: identical, disjoint and half-overlapping masks") {
    LabelMask a = mask_of({1, 1, 4}, {1, 1, 0, 0});
    CHECK(dice(a, a, 1) == 1.0);

    LabelMask b = mask_of({1, 1, 4}, {0, 0, 1, 1});
    CHECK(dice(a, b, 1) == 0.0);

    // |X| = |Y| = 100, overlap 50
    std::vector<std::uint8_t> x(300, 0), y(300, 0);
    for (std::size_t i = 0; i < 100; ++i) x[i] = 1;
    for (std::size_t i = 50; i < 150; ++i) y[i] = 1;
    CHECK(dice(mask_of({1, 10, 30}, x), mask_of({1, 10, 30}, y), 1) == doctest::Approx(0.5));

    // both empty -> defined as 1.0
    LabelMask e1 = mask_of({1, 1, 4}, {0, 0, 0, 0});
    CHECK(dice(e1, e1, 1) == 1.0);

    CHECK_THROWS_AS(dice(a, mask_of({1, 1, 5}, {0, 0, 0, 0, 0}), 1), std::invalid_argument);
}

TEST_CASE("dice: symmetric and invariant under joint spatial permutation") {
    Rng rng(201);
    std::vector<std::uint8_t> a(64), b(64);
    for (auto& v : a) v = std::uint8_t(rng.uniform_int(0, 2));
    for (auto& v : b) v = std::uint8_t(rng.uniform_int(0, 2));
    const VolDims dims{1, 8, 8};
    const double d1 = dice(mask_of(dims, a), mask_of(dims, b), 1);
    CHECK(d1 == dice(mask_of(dims, b), mask_of(dims, a), 1));

    std::vector<std::size_t> perm(64);
    for (std::size_t i = 0; i < 64; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<std::uint8_t> ap(64), bp(64);
    for (std::size_t i = 0; i < 64; ++i) {
        ap[i] = a[perm[i]];
        bp[i] = b[perm[i]];
    }
    CHECK(dice(mask_of(dims, ap), mask_of(dims, bp), 1) == d1);
}

TEST_CASE("depot_volume: voxel count times physical voxel volume") {
    // 10,000 voxels at (2.07, 2.07, 8) mm -> 342.792 mL
    std::vector<std::uint8_t> labels(20000, 0);
    for (std::size_t i = 0; i < 10000; ++i) labels[i] = 1;
    // spacing is stored as float32, so the voxel volume carries ~1e-7 relative error
    CHECK(depot_volume_ml(mask_of({2, 100, 100}, labels), 1) == doctest::Approx(342.792).epsilon(1e-6));
    CHECK(depot_volume_ml(mask_of({2, 100, 100}, labels), 2) == 0.0);

    std::vector<std::uint8_t> unit(1000, 2);
    CHECK(depot_volume_ml(mask_of({10, 10, 10}, unit, {1, 1, 1}), 2) == doctest::Approx(1.0));
}

TEST_CASE("depot_volume: additive over disjoint partitions") {
    Rng rng(203);
    std::vector<std::uint8_t> labels(128);
    for (auto& v : labels) v = std::uint8_t(rng.uniform_int(0, 2));
    auto m = mask_of({2, 8, 8}, labels);
    std::vector<std::uint8_t> lo(labels.begin(), labels.begin() + 64), hi(labels.begin() + 64, labels.end());
    const double whole = depot_volume_ml(m, 1);
    const double parts = depot_volume_ml(mask_of({1, 8, 8}, lo), 1) + depot_volume_ml(mask_of({1, 8, 8}, hi), 1);
    CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
}

TEST_CASE("volume_errors: signed and percentage conventions") {
    auto e = volume_errors(1000.0, 1000.0);
    CHECK(e.signed_ml == 0.0);
    CHECK(e.abs_pct == 0.0);

    e = volume_errors(970.0, 1000.0);
    CHECK(e.signed_ml == doctest::Approx(-30.0));
    CHECK(e.abs_pct == doctest::Approx(3.0));
    CHECK(970.0 / 1000.0 - 1.0 == doctest::Approx(-0.03));  // scatter-axis convention

    e = volume_errors(0.0, 0.0);
    CHECK(e.abs_pct == 0.0);
    CHECK(e.pct_defined);

    e = volume_errors(5.0, 0.0);
    CHECK(!e.pct_defined);
    CHECK(e.signed_ml == doctest::Approx(5.0));
}

TEST_CASE("aggregate: single scan, pairwise mean/std, center grouping") {
    LabelMask ref = mask_of({1, 2, 2}, {1, 1, 2, 0});
    ScanMetrics a = evaluate_scan("s1", "A", ref, ref);
    CHECK(a.vat.dice == 1.0);
    CHECK(a.sat.abs_pct == 0.0);

    auto single = aggregate(std::vector<ScanMetrics>{a});
    CHECK(single.all.vat.dice.mean == 1.0);
    CHECK(single.all.vat.dice.stddev == 0.0);
    CHECK(single.all.scans == 1);

    ScanMetrics b = a;
    b.scan_id = "s2";
    b.center = "B";
    a.vat.dice = 0.9;
    b.vat.dice = 1.0;
    ScanMetrics c = b;
    c.scan_id = "s3";
    c.center = "A";
    c.vat.dice = 0.9;
    auto rep = aggregate(std::vector<ScanMetrics>{a, b, c});
    CHECK(rep.all.scans == 3);
    // population std of {0.9, 1.0}: 0.05
    auto two = aggregate(std::vector<ScanMetrics>{a, b});
    CHECK(two.all.vat.dice.mean == doctest::Approx(0.95));
    CHECK(two.all.vat.dice.stddev == doctest::Approx(0.05));

    REQUIRE(rep.per_center.size() == 2);
    CHECK(rep.per_center[0].center == "A");
    CHECK(rep.per_center[0].scans == 2);
    CHECK(rep.per_center[1].center == "B");
    CHECK(rep.per_center[1].scans == 1);

    CHECK_THROWS_AS(aggregate(std::vector<ScanMetrics>{}), std::invalid_argument);
}

TEST_CASE("aggregate: permutation invariant over scan order") {
    Rng rng(205);
    std::vector<ScanMetrics> ms;
    for (int i = 0; i < 7; ++i) {
        std::vector<std::uint8_t> p(27), r(27);
        for (auto& v : p) v = std::uint8_t(rng.uniform_int(0, 2));
        for (auto& v : r) v = std::uint8_t(rng.uniform_int(0, 2));
        ms.push_back(evaluate_scan("s" + std::to_string(i), "A", mask_of({3, 3, 3}, p), mask_of({3, 3, 3}, r)));
    }
    auto rep1 = aggregate(ms);
    std::reverse(ms.begin(), ms.end());
    auto rep2 = aggregate(ms);
    CHECK(rep1.all.vat.dice.mean == doctest::Approx(rep2.all.vat.dice.mean).epsilon(1e-12));
    CHECK(rep1.all.sat.err_ml.stddev == doctest::Approx(rep2.all.sat.err_ml.stddev).epsilon(1e-12));
}

TEST_CASE("dice == 1 implies zero volume error") {
    Rng rng(207);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::uint8_t> p(64), r(64);
        for (std::size_t i = 0; i < 64; ++i) {
            r[i] = std::uint8_t(rng.uniform_int(0, 2));
            p[i] = rng.uniform() < 0.2 ? std::uint8_t(rng.uniform_int(0, 2)) : r[i];
        }
        const auto m = evaluate_scan("s", "c", mask_of({1, 8, 8}, p), mask_of({1, 8, 8}, r));
        if (m.vat.dice == 1.0) CHECK(m.vat.abs_pct == 0.0);
        if (m.sat.dice == 1.0) CHECK(m.sat.abs_pct == 0.0);
    }
}

TEST_CASE("compare_masks: self, disjoint, and an erosion fixture") {
    LabelMask ref({1, 16, 16}, {1, 1, 1});
    for (std::int64_t y = 4; y < 12; ++y)
        for (std::int64_t x = 4; x < 12; ++x) ref.at(0, y, x) = LabelMask::kVat;
    auto self = compare_masks(ref, ref);
    CHECK(self[0] == 1.0);
    CHECK(self[1] == 1.0);

    // second operator: the same depot eroded by one voxel on each side
    LabelMask eroded({1, 16, 16}, {1, 1, 1});
    for (std::int64_t y = 5; y < 11; ++y)
        for (std::int64_t x = 5; x < 11; ++x) eroded.at(0, y, x) = LabelMask::kVat;
    auto inter = compare_masks(ref, eroded);
    // dice = 2*36 / (64 + 36) = 0.72, frozen from the erosion arithmetic
    CHECK(inter[0] == doctest::Approx(0.72));
    CHECK(inter[0] < 1.0);

    LabelMask other({1, 16, 16}, {1, 1, 1});
    other.at(0, 0, 0) = LabelMask::kVat;
    LabelMask far({1, 16, 16}, {1, 1, 1});
    far.at(0, 15, 15) = LabelMask::kVat;
    auto disjoint = compare_masks(other, far);
    CHECK(disjoint[0] == 0.0);
}

TEST_CASE("scan metrics CSV round trip preserves the aggregate") {
    Rng rng(209);
    std::vector<ScanMetrics> ms;
    for (int i = 0; i < 4; ++i) {
        std::vector<std::uint8_t> p(27), r(27);
        for (auto& v : p) v = std::uint8_t(rng.uniform_int(0, 2));
        for (auto& v : r) v = std::uint8_t(rng.uniform_int(0, 2));
        ms.push_back(evaluate_scan("s" + std::to_string(i), i % 2 ? "A" : "B", mask_of({3, 3, 3}, p),
                                   mask_of({3, 3, 3}, r)));
    }
    const auto path = std::filesystem::temp_directory_path() / "fatseg_metrics.csv";
    write_scan_metrics_csv(path, ms);
    const auto back = read_scan_metrics_csv(path);
    REQUIRE(back.size() == ms.size());
    const auto r1 = aggregate(ms), r2 = aggregate(back);
    CHECK(r1.all.vat.dice.mean == doctest::Approx(r2.all.vat.dice.mean).epsilon(1e-9));
    CHECK(r1.all.sat.err_pct.mean == doctest::Approx(r2.all.sat.err_pct.mean).epsilon(1e-9));
    std::filesystem::remove(path);
}
