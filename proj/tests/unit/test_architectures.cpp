#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "fatseg/checkpoint.hpp"
#include "fatseg/net.hpp"
#include "oracles.hpp"

using namespace fatseg;

namespace {

// Analytic layer walk, independent of the builder.
std::int64_t unet_param_oracle(std::int64_t in_ch, std::int64_t classes, std::int64_t depth, std::int64_t base) {
    auto conv_p = [](std::int64_t k, std::int64_t c, std::int64_t kh, std::int64_t kw) {
        return k * c * kh * kw + k;
    };
    std::int64_t total = 0, in = in_ch;
    for (std::int64_t l = 0; l < depth; ++l) {
        const std::int64_t c = base << l;
        total += conv_p(c, in, 3, 3) + conv_p(c, c, 3, 3);
        in = c;
    }
    const std::int64_t cb = base << depth;
    total += conv_p(cb, in, 3, 3) + conv_p(cb, cb, 3, 3);
    std::int64_t up_in = cb;
    for (std::int64_t l = depth - 1; l >= 0; --l) {
        const std::int64_t c = base << l;
        total += up_in * c * 4 + c;                           // 2x2 transposed conv
        total += conv_p(c, 2 * c, 3, 3) + conv_p(c, c, 3, 3);  // post-concat convs
        up_in = c;
    }
    total += conv_p(classes, base, 1, 1);
    return total;
}

void zero_layer(Network<float>& net, const std::string& prefix) {
    net.visit_state([&](const std::string& path, Tensor<float>& t, ParamKind) {
        if (path.rfind(prefix, 0) == 0 && (path.ends_with(".weight") || path.ends_with(".bias")))
            std::fill(t.data().begin(), t.data().end(), 0.0f);
    });
}

}  // namespace

TEST_CASE("unet: output spatial dims equal input dims") {
    Rng rng(41);
    UNetSpec spec;
    spec.base_channels = 4;
    auto net = build_unet<float>(spec, rng);
    for (const Shape in_shape : {Shape{1, 3, 256, 256}, Shape{1, 3, 64, 96}, Shape{2, 3, 32, 32}}) {
        Tensor<float> x = oracle::random_tensor<float>(in_shape, rng);
        auto y = net->forward(x, {});
        CHECK(y.shape() == in_shape);  // num_classes == in_channels == 3 here
    }
}

TEST_CASE("unet: bottleneck shape for base 8 on 64x64") {
    Rng rng(43);
    UNetSpec spec;
    spec.base_channels = 8;
    auto net = build_unet<float>(spec, rng);
    ShapeTrace trace;
    Tensor<float> x({1, 3, 64, 64});
    ForwardOptions<float> opts;
    opts.trace = &trace;
    auto y = net->forward(x, opts);
    CHECK(y.shape() == Shape{1, 3, 64, 64});
    const auto* bn = trace.find("bottleneck");
    REQUIRE(bn != nullptr);
    CHECK(bn->shape == Shape{1, 128, 4, 4});
}

TEST_CASE("unet: parameter count matches the layer-walk oracle (frozen regression)") {
    const std::int64_t want = unet_param_oracle(3, 3, 4, 64);
    CHECK(want == 31031875);  // frozen for the default configuration
    Rng rng(45);
    auto net = build_unet<float>(UNetSpec{}, rng);
    CHECK(param_count(*net) == want);

    UNetSpec small;
    small.base_channels = 8;
    Rng rng2(45);
    auto net2 = build_unet<float>(small, rng2);
    CHECK(param_count(*net2) == unet_param_oracle(3, 3, 4, 8));
}

TEST_CASE("unet: indivisible inputs are rejected with the axis named") {
    Rng rng(47);
    UNetSpec spec;
    spec.base_channels = 2;
    auto net = build_unet<float>(spec, rng);
    Tensor<float> bad_h({1, 3, 100, 64});
    CHECK_THROWS_WITH_AS(net->forward(bad_h, {}), doctest::Contains("height"), std::invalid_argument);
    Tensor<float> bad_w({1, 3, 64, 100});
    CHECK_THROWS_WITH_AS(net->forward(bad_w, {}), doctest::Contains("width"), std::invalid_argument);
}

TEST_CASE("vnet: encoder depth schedule 24,24,12,12,6 and full-depth output") {
    Rng rng(49);
    VNetSpec spec;
    spec.base_channels = 4;
    auto net = build_vnet<float>(spec, rng);
    ShapeTrace trace;
    Tensor<float> x = oracle::random_tensor<float>({1, 3, 24, 32, 32}, rng);
    ForwardOptions<float> opts;
    opts.trace = &trace;
    auto y = net->forward(x, opts);
    CHECK(y.shape() == Shape{1, 3, 24, 32, 32});

    const std::vector<std::pair<std::string, std::int64_t>> enc_depths{
        {"enc1", 24}, {"enc2", 24}, {"enc3", 12}, {"enc4", 12}, {"enc5", 6}};
    for (const auto& [name, depth] : enc_depths) {
        const auto* e = trace.find(name);
        REQUIRE_MESSAGE(e != nullptr, name);
        CHECK_MESSAGE(e->shape[2] == depth, name);
    }
    // decoder mirrors the schedule in reverse
    const std::vector<std::pair<std::string, std::int64_t>> dec_depths{
        {"dec4", 12}, {"dec3", 12}, {"dec2", 24}, {"dec1", 24}};
    for (const auto& [name, depth] : dec_depths) {
        const auto* e = trace.find(name);
        REQUIRE_MESSAGE(e != nullptr, name);
        CHECK_MESSAGE(e->shape[2] == depth, name);
    }
}

TEST_CASE("vnet: wrong input depth is rejected") {
    Rng rng(51);
    VNetSpec spec;
    spec.base_channels = 2;
    auto net = build_vnet<float>(spec, rng);
    Tensor<float> x({1, 3, 20, 32, 32});
    CHECK_THROWS_WITH_AS(net->forward(x, {}), doctest::Contains("depth"), std::invalid_argument);
}

TEST_CASE("vnet: no residual add in the first convolutional block") {
    Rng rng(53);
    VNetSpec spec;
    spec.base_channels = 2;
    spec.dropout_p = 0.0;
    auto net = build_vnet<float>(spec, rng);

    const auto blocks = net->blocks();
    REQUIRE(!blocks.empty());
    CHECK(blocks.front().name == "enc1");
    CHECK(blocks.front().residual_add == false);
    for (std::size_t i = 1; i < blocks.size(); ++i) CHECK_MESSAGE(blocks[i].residual_add, blocks[i].name);

    // functional audit: with enc1's convs zeroed the block output carries no
    // trace of the input, so the whole network collapses to zero scores
    zero_layer(*net, "enc1.conv");
    auto x1 = oracle::random_tensor<float>({1, 3, 24, 16, 16}, rng);
    auto x2 = oracle::random_tensor<float>({1, 3, 24, 16, 16}, rng);
    auto y1 = net->forward(x1, {});
    auto y2 = net->forward(x2, {});
    for (std::size_t i = 0; i < y1.data().size(); ++i) {
        CHECK(y1.data()[i] == 0.0f);
        CHECK(y1.data()[i] == y2.data()[i]);
    }
}

TEST_CASE("vnet: later blocks pass the residual identity when their conv stack is zeroed") {
    Rng rng(55);
    VNetSpec spec;
    spec.base_channels = 2;
    spec.dropout_p = 0.0;
    auto net = build_vnet<float>(spec, rng);
    zero_layer(*net, "enc2.conv");

    ShapeTrace trace;
    ForwardOptions<float> opts;
    opts.trace = &trace;
    auto x = oracle::random_tensor<float>({1, 3, 24, 16, 16}, rng);
    net->forward(x, opts);

    const auto* in = trace.find("down1");   // enc2's input
    const auto* out = trace.find("enc2");   // enc2's output
    REQUIRE(in != nullptr);
    REQUIRE(out != nullptr);
    CHECK(out->checksum == in->checksum);   // output == input + 0

    // control: an untouched block transforms its input
    const auto* in3 = trace.find("down2");
    const auto* out3 = trace.find("enc3");
    REQUIRE(in3 != nullptr);
    REQUIRE(out3 != nullptr);
    CHECK(out3->checksum != in3->checksum);
}

TEST_CASE("forward: zero input yields finite scores; eval forwards are bit-identical") {
    Rng rng(57);
    VNetSpec spec;
    spec.base_channels = 2;
    auto net = build_vnet<float>(spec, rng);
    Tensor<float> zero({1, 3, 24, 16, 16});
    auto y = net->forward(zero, {});
    for (auto v : y.data()) CHECK(std::isfinite(v));

    auto x = oracle::random_tensor<float>({1, 3, 24, 16, 16}, rng);
    auto a = net->forward(x, {});
    auto b = net->forward(x, {});
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
}

TEST_CASE("forward: batch permutation permutes outputs identically") {
    Rng rng(59);
    UNetSpec spec;
    spec.base_channels = 4;
    auto net = build_unet<float>(spec, rng);
    auto a = oracle::random_tensor<float>({1, 3, 32, 32}, rng);
    auto b = oracle::random_tensor<float>({1, 3, 32, 32}, rng);

    auto pack = [&](const Tensor<float>& first, const Tensor<float>& second) {
        Tensor<float> batch({2, 3, 32, 32});
        std::copy(first.data().begin(), first.data().end(), batch.data().begin());
        std::copy(second.data().begin(), second.data().end(), batch.data().begin() + first.numel());
        return batch;
    };
    auto yab = net->forward(pack(a, b), {});
    auto yba = net->forward(pack(b, a), {});
    const std::size_t half = yab.data().size() / 2;
    CHECK(std::memcmp(yab.data().data(), yba.data().data() + half, half * sizeof(float)) == 0);
    CHECK(std::memcmp(yab.data().data() + half, yba.data().data(), half * sizeof(float)) == 0);
}

TEST_CASE("no parameter storage is shared between layers") {
    Rng rng(61);
    VNetSpec spec;
    spec.base_channels = 2;
    auto net = build_vnet<float>(spec, rng);
    std::set<const float*> seen;
    std::size_t count = 0;
    net->visit_state([&](const std::string&, Tensor<float>& t, ParamKind) {
        seen.insert(t.data().data());
        ++count;
    });
    CHECK(seen.size() == count);
}

TEST_CASE("checkpoint: save -> load -> forward is bit-identical") {
    Rng rng(63);
    UNetSpec spec;
    spec.base_channels = 2;
    auto net = build_unet<float>(spec, rng);

    TrainerState state;
    state.iteration = 123;
    state.adam.step = 123;
    state.rng = Rng(777);
    state.adam.slots["enc1.conv1.weight"].m.assign(54, 0.5f);
    state.adam.slots["enc1.conv1.weight"].v.assign(54, 0.25f);

    const auto path = std::filesystem::temp_directory_path() / "fatseg_test_ck.ckpt";
    save_checkpoint(path, *net, state);
    auto loaded = load_checkpoint(path);

    CHECK(loaded.state.iteration == 123);
    CHECK(loaded.state.adam.step == 123);
    CHECK(loaded.state.rng.serialize() == state.rng.serialize());
    REQUIRE(loaded.state.adam.slots.count("enc1.conv1.weight") == 1);
    CHECK(loaded.state.adam.slots["enc1.conv1.weight"].m[0] == 0.5f);

    auto x = oracle::random_tensor<float>({1, 3, 32, 32}, rng);
    auto y1 = net->forward(x, {});
    auto y2 = loaded.net->forward(x, {});
    CHECK(std::memcmp(y1.data().data(), y2.data().data(), y1.data().size() * sizeof(float)) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint: structural mismatches and corruption are rejected") {
    Rng rng(65);
    UNetSpec spec;
    spec.base_channels = 2;
    auto net = build_unet<float>(spec, rng);
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = dir / "fatseg_test_ck2.ckpt";
    save_checkpoint(path, *net, {});

    // truncation
    const auto truncated = dir / "fatseg_test_ck2_trunc.ckpt";
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(truncated, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);

    // bad magic
    const auto bad = dir / "fatseg_test_ck2_bad.ckpt";
    {
        std::ofstream out(bad, std::ios::binary);
        out.write("NOPE", 4);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("magic"), std::runtime_error);

    for (const auto& p : {path, truncated, bad}) std::filesystem::remove(p);
}
