#include <doctest.h>

#include <cstring>
#include <fstream>

#include "fatseg/io.hpp"
#include "fatseg/rng.hpp"

using namespace fatseg;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("MVF: volume round trip is bit-exact") {
    TempDir dir("fatseg_io_vol");
    Rng rng(91);
    Volume v(3, {5, 7, 9}, {2.07f, 2.07f, 8.0f});
    for (auto& x : v.data()) x = static_cast<float>(rng.normal());
    const auto p = dir.path / "v.mvf";
    write_volume(p, v);
    Volume r = read_volume(p);
    CHECK(r.channels() == 3);
    CHECK(r.dims() == v.dims());
    CHECK(r.spacing() == v.spacing());
    CHECK(std::memcmp(r.data().data(), v.data().data(), v.data().size() * sizeof(float)) == 0);
}

TEST_CASE("MVF: label round trip and domain enforcement") {
    TempDir dir("fatseg_io_lab");
    Rng rng(93);
    LabelMask m({4, 6, 6}, {1.0f, 1.0f, 1.0f});
    for (auto& l : m.labels) l = std::uint8_t(rng.uniform_int(0, 2));
    const auto p = dir.path / "m.mvf";
    write_volume(p, m);
    LabelMask r = read_label_mask(p);
    CHECK(r.dims == m.dims);
    CHECK(r.labels == m.labels);

    // value 3 in the payload -> rejected
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(33);  // first payload byte
        const char three = 3;
        f.write(&three, 1);
    }
    CHECK_THROWS_WITH_AS(read_label_mask(p), doctest::Contains("{0,1,2}"), std::runtime_error);

    // reading a label file as a float volume (and vice versa) is rejected
    write_volume(p, m);
    CHECK_THROWS_AS(read_volume(p), std::runtime_error);
}

TEST_CASE("MVF: truncation reports expected vs actual byte counts") {
    TempDir dir("fatseg_io_trunc");
    Volume v(1, {2, 4, 4}, {1, 1, 1});
    const auto p = dir.path / "v.mvf";
    write_volume(p, v);
    // drop the last 8 bytes
    const auto full = std::filesystem::file_size(p);
    std::filesystem::resize_file(p, full - 8);
    CHECK_THROWS_WITH_AS(read_volume(p), doctest::Contains("expected 128 bytes, got 120"), std::runtime_error);

    std::ofstream(p, std::ios::binary) << "XXXX";
    CHECK_THROWS_WITH_AS(read_volume(p), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("manifest: 45 patients x 2 visits load as 90 records") {
    TempDir dir("fatseg_io_man");
    std::ofstream os(dir.path / "manifest.csv");
    os << "# cohort\n";
    LabelMask stub({1, 1, 1}, {1, 1, 1});
    for (int p = 1; p <= 45; ++p)
        for (int v = 1; v <= 2; ++v) {
            const std::string stem = "p" + std::to_string(p) + "_v" + std::to_string(v);
            write_volume(dir.path / (stem + ".mvf"), stub);
            write_volume(dir.path / (stem + ".labels.mvf"), stub);
            os << "p" << p << ", " << v << ", " << stem << ".mvf, " << stem << ".labels.mvf, uppsala\n";
        }
    os.close();
    const auto records = load_manifest(dir.path / "manifest.csv");
    CHECK(records.size() == 90);
    CHECK(records[0].patient_id == "p1");
    CHECK(records[0].scan_id() == "p1_v1");
    CHECK(records[0].center_tag == "uppsala");
    CHECK(std::filesystem::exists(records[0].image_path));
}

TEST_CASE("manifest: empty file yields an empty list") {
    TempDir dir("fatseg_io_empty");
    std::ofstream(dir.path / "m.csv") << "# nothing here\n\n";
    CHECK(load_manifest(dir.path / "m.csv").empty());
}

TEST_CASE("manifest: duplicates, malformed lines and missing files are rejected with line numbers") {
    TempDir dir("fatseg_io_bad");
    LabelMask stub({1, 1, 1}, {1, 1, 1});
    write_volume(dir.path / "a.mvf", stub);
    write_volume(dir.path / "a.labels.mvf", stub);

    std::ofstream(dir.path / "dup.csv") << "p1, 1, a.mvf, a.labels.mvf, c\np1, 1, a.mvf, a.labels.mvf, c\n";
    CHECK_THROWS_WITH_AS(load_manifest(dir.path / "dup.csv"), doctest::Contains("line 2"), std::runtime_error);

    std::ofstream(dir.path / "short.csv") << "p1, 1, a.mvf\n";
    CHECK_THROWS_WITH_AS(load_manifest(dir.path / "short.csv"), doctest::Contains("line 1"), std::runtime_error);

    std::ofstream(dir.path / "novisit.csv") << "p1, one, a.mvf, a.labels.mvf, c\n";
    CHECK_THROWS_WITH_AS(load_manifest(dir.path / "novisit.csv"), doctest::Contains("not an integer"),
                         std::runtime_error);

    std::ofstream(dir.path / "gone.csv") << "p1, 1, missing.mvf, a.labels.mvf, c\n";
    CHECK_THROWS_WITH_AS(load_manifest(dir.path / "gone.csv"), doctest::Contains("does not exist"),
                         std::runtime_error);
}

TEST_CASE("body_mask_path convention") {
    CHECK(body_mask_path("d/p001_v1.mvf") == std::filesystem::path("d/p001_v1.body.mvf"));
}
