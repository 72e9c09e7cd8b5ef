#include "fatseg/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fatseg {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated while reading u32");
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated while reading u64");
    return v;
}

void write_record(std::ostream& os, const std::string& key, const Shape& shape, std::span<const float> data) {
    write_u32(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) write_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

struct Record {
    Shape shape;
    std::vector<float> data;
};

Record read_record(std::istream& is, std::string& key) {
    const std::uint32_t klen = read_u32(is);
    key.resize(klen);
    is.read(key.data(), klen);
    if (!is) throw std::runtime_error("checkpoint: truncated while reading record key");
    Record r;
    const std::uint32_t rank = read_u32(is);
    std::int64_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
        const std::uint32_t e = read_u32(is);
        r.shape.push_back(static_cast<std::int64_t>(e));
        n *= e;
    }
    r.data.resize(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for record '" + key + "'");
    return r;
}

nlohmann::json spec_to_json(const NetSpec& spec) {
    nlohmann::json j;
    if (std::holds_alternative<UNetSpec>(spec)) {
        const auto& s = std::get<UNetSpec>(spec);
        j["arch"] = "unet";
        j["in_channels"] = s.in_channels;
        j["num_classes"] = s.num_classes;
        j["depth"] = s.depth;
        j["base_channels"] = s.base_channels;
        j["conv_bias"] = s.conv_bias;
    } else {
        const auto& s = std::get<VNetSpec>(spec);
        j["arch"] = "vnet";
        j["in_channels"] = s.in_channels;
        j["num_classes"] = s.num_classes;
        j["levels"] = s.levels;
        j["base_channels"] = s.base_channels;
        j["input_depth"] = s.input_depth;
        j["down_strides"] = nlohmann::json::array();
        for (const auto& st : s.down_strides) j["down_strides"].push_back({st[0], st[1], st[2]});
        j["encoder_convs"] = s.encoder_convs;
        j["decoder_convs_per_level"] = s.decoder_convs_per_level;
        j["dropout_p"] = s.dropout_p;
        j["bn_epsilon"] = s.bn_epsilon;
        j["bn_momentum"] = s.bn_momentum;
    }
    return j;
}

NetSpec spec_from_json(const nlohmann::json& j) {
    const std::string arch = j.at("arch").get<std::string>();
    if (arch == "unet") {
        UNetSpec s;
        s.in_channels = j.at("in_channels").get<std::int64_t>();
        s.num_classes = j.at("num_classes").get<std::int64_t>();
        s.depth = j.at("depth").get<std::int64_t>();
        s.base_channels = j.at("base_channels").get<std::int64_t>();
        s.conv_bias = j.at("conv_bias").get<bool>();
        return s;
    }
    if (arch != "vnet") throw std::runtime_error("checkpoint: unknown arch '" + arch + "'");
    VNetSpec s;
    s.in_channels = j.at("in_channels").get<std::int64_t>();
    s.num_classes = j.at("num_classes").get<std::int64_t>();
    s.levels = j.at("levels").get<std::int64_t>();
    s.base_channels = j.at("base_channels").get<std::int64_t>();
    s.input_depth = j.at("input_depth").get<std::int64_t>();
    s.down_strides.clear();
    for (const auto& st : j.at("down_strides"))
        s.down_strides.push_back({st.at(0).get<std::int64_t>(), st.at(1).get<std::int64_t>(),
                                  st.at(2).get<std::int64_t>()});
    s.encoder_convs = j.at("encoder_convs").get<std::vector<std::int64_t>>();
    s.decoder_convs_per_level = j.at("decoder_convs_per_level").get<std::int64_t>();
    s.dropout_p = j.at("dropout_p").get<double>();
    s.bn_epsilon = j.at("bn_epsilon").get<double>();
    s.bn_momentum = j.at("bn_momentum").get<double>();
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network<float>& net, const TrainerState& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "' for writing");

    nlohmann::json header;
    header["spec"] = spec_to_json(net.spec());
    header["iteration"] = state.iteration;
    header["adam_step"] = state.adam.step;
    header["rng"] = state.rng.serialize();
    const std::string hs = header.dump();

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    std::uint64_t count = 0;
    net.visit_state([&](const std::string&, Tensor<float>&, ParamKind) { ++count; });
    for (const auto& [key, slot] : state.adam.slots) count += slot.m.empty() ? 0 : 2;
    write_u64(os, count);

    net.visit_state([&](const std::string& key, Tensor<float>& t, ParamKind) {
        write_record(os, key, t.shape(), t.data());
    });
    for (const auto& [key, slot] : state.adam.slots) {
        if (slot.m.empty()) continue;
        const Shape shape{static_cast<std::int64_t>(slot.m.size())};
        write_record(os, "adam.m." + key, shape, slot.m);
        write_record(os, "adam.v." + key, shape, slot.v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failure on '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");

    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4))
        throw std::runtime_error("checkpoint: bad magic in '" + path.string() + "'");
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));

    const std::uint64_t hlen = read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    const nlohmann::json header = nlohmann::json::parse(hs);

    LoadedCheckpoint out;
    Rng scratch_rng(0);  // parameters are overwritten below
    out.net = build_network<float>(spec_from_json(header.at("spec")), scratch_rng);
    out.state.iteration = header.at("iteration").get<std::int64_t>();
    out.state.adam.step = header.at("adam_step").get<std::int64_t>();
    out.state.rng = Rng::deserialize(header.at("rng").get<std::string>());

    const std::uint64_t count = read_u64(is);
    std::map<std::string, Record> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string key;
        Record r = read_record(is, key);
        if (!records.emplace(std::move(key), std::move(r)).second)
            throw std::runtime_error("checkpoint: duplicate record key");
    }

    std::set<std::string> consumed;
    out.net->visit_state([&](const std::string& key, Tensor<float>& t, ParamKind) {
        auto it = records.find(key);
        if (it == records.end()) throw std::runtime_error("checkpoint: missing record for layer path '" + key + "'");
        if (it->second.shape != t.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + key + "': file " +
                                     shape_str(it->second.shape) + " vs spec " + shape_str(t.shape()));
        std::copy(it->second.data.begin(), it->second.data.end(), t.data().begin());
        consumed.insert(key);
    });
    for (auto& [key, rec] : records) {
        if (consumed.count(key)) continue;
        if (key.rfind("adam.m.", 0) == 0)
            out.state.adam.slots[key.substr(7)].m = std::move(rec.data);
        else if (key.rfind("adam.v.", 0) == 0)
            out.state.adam.slots[key.substr(7)].v = std::move(rec.data);
        else
            throw std::runtime_error("checkpoint: record '" + key + "' does not match any layer path");
    }
    return out;
}

}  // namespace fatseg
