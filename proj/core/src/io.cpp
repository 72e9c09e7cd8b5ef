#include "fatseg/io.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fatseg {

namespace {

static_assert(std::endian::native == std::endian::little, "MVF format assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'V', 'F', '1'};
constexpr std::uint8_t kDtypeFloat = 0;
constexpr std::uint8_t kDtypeLabel = 1;

struct Header {
    std::uint32_t channels, depth, height, width;
    Spacing spacing;
    std::uint8_t dtype;
};

void write_header(std::ostream& os, const Header& h) {
    os.write(kMagic, 4);
    os.write(reinterpret_cast<const char*>(&h.channels), 4);
    os.write(reinterpret_cast<const char*>(&h.depth), 4);
    os.write(reinterpret_cast<const char*>(&h.height), 4);
    os.write(reinterpret_cast<const char*>(&h.width), 4);
    os.write(reinterpret_cast<const char*>(&h.spacing.x), 4);
    os.write(reinterpret_cast<const char*>(&h.spacing.y), 4);
    os.write(reinterpret_cast<const char*>(&h.spacing.z), 4);
    os.write(reinterpret_cast<const char*>(&h.dtype), 1);
}

Header read_header(std::istream& is, const std::filesystem::path& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4))
        throw std::runtime_error("MVF: bad magic in '" + path.string() + "'");
    Header h{};
    is.read(reinterpret_cast<char*>(&h.channels), 4);
    is.read(reinterpret_cast<char*>(&h.depth), 4);
    is.read(reinterpret_cast<char*>(&h.height), 4);
    is.read(reinterpret_cast<char*>(&h.width), 4);
    is.read(reinterpret_cast<char*>(&h.spacing.x), 4);
    is.read(reinterpret_cast<char*>(&h.spacing.y), 4);
    is.read(reinterpret_cast<char*>(&h.spacing.z), 4);
    is.read(reinterpret_cast<char*>(&h.dtype), 1);
    if (!is) throw std::runtime_error("MVF: truncated header in '" + path.string() + "'");
    if (h.channels == 0 || h.depth == 0 || h.height == 0 || h.width == 0)
        throw std::runtime_error("MVF: zero extent in header of '" + path.string() + "'");
    return h;
}

void read_payload(std::istream& is, char* dst, std::size_t expected, const std::filesystem::path& path) {
    is.read(dst, static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(is.gcount());
    if (got != expected)
        throw std::runtime_error("MVF: truncated payload in '" + path.string() + "': expected " +
                                 std::to_string(expected) + " bytes, got " + std::to_string(got));
    // trailing garbage would also break bit-exact round trips
    char probe;
    if (is.read(&probe, 1), is.gcount() != 0)
        throw std::runtime_error("MVF: trailing bytes after payload in '" + path.string() + "'");
}

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("MVF: cannot open '" + path.string() + "' for writing");
    write_header(os, {static_cast<std::uint32_t>(v.channels()), static_cast<std::uint32_t>(v.dims().depth),
                      static_cast<std::uint32_t>(v.dims().height), static_cast<std::uint32_t>(v.dims().width),
                      v.spacing(), kDtypeFloat});
    os.write(reinterpret_cast<const char*>(v.data().data()),
             static_cast<std::streamsize>(v.data().size() * sizeof(float)));
    if (!os) throw std::runtime_error("MVF: write failure on '" + path.string() + "'");
}

void write_volume(const std::filesystem::path& path, const LabelMask& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("MVF: cannot open '" + path.string() + "' for writing");
    write_header(os, {1, static_cast<std::uint32_t>(m.dims.depth), static_cast<std::uint32_t>(m.dims.height),
                      static_cast<std::uint32_t>(m.dims.width), m.spacing, kDtypeLabel});
    os.write(reinterpret_cast<const char*>(m.labels.data()), static_cast<std::streamsize>(m.labels.size()));
    if (!os) throw std::runtime_error("MVF: write failure on '" + path.string() + "'");
}

Volume read_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("MVF: cannot open '" + path.string() + "'");
    const Header h = read_header(is, path);
    if (h.dtype != kDtypeFloat)
        throw std::runtime_error("MVF: '" + path.string() + "' holds labels, not a float volume");
    Volume v(h.channels, {h.depth, h.height, h.width}, h.spacing);
    read_payload(is, reinterpret_cast<char*>(v.data().data()), v.data().size() * sizeof(float), path);
    return v;
}

LabelMask read_label_mask(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("MVF: cannot open '" + path.string() + "'");
    const Header h = read_header(is, path);
    if (h.dtype != kDtypeLabel)
        throw std::runtime_error("MVF: '" + path.string() + "' holds a float volume, not labels");
    if (h.channels != 1)
        throw std::runtime_error("MVF: label file '" + path.string() + "' must have one channel, has " +
                                 std::to_string(h.channels));
    LabelMask m({h.depth, h.height, h.width}, h.spacing);
    read_payload(is, reinterpret_cast<char*>(m.labels.data()), m.labels.size(), path);
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        if (m.labels[i] > 2)
            throw std::runtime_error("MVF: label value " + std::to_string(int(m.labels[i])) + " at voxel " +
                                     std::to_string(i) + " in '" + path.string() + "' outside domain {0,1,2}");
    return m;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open '" + path.string() + "'");
    const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";

    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };

    std::vector<ManifestRecord> records;
    std::set<std::pair<std::string, int>> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (trim(line).empty()) continue;

        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(trim(f));
        if (fields.size() != 5)
            throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": expected 5 comma-separated " +
                                     "fields, got " + std::to_string(fields.size()));

        ManifestRecord r;
        r.patient_id = fields[0];
        try {
            std::size_t used = 0;
            r.visit = std::stoi(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": visit '" + fields[1] +
                                     "' is not an integer");
        }
        auto resolve = [&](const std::string& p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : base / fp;
        };
        r.image_path = resolve(fields[2]);
        r.label_path = resolve(fields[3]);
        r.center_tag = fields[4];
        if (r.patient_id.empty())
            throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": empty patient id");
        if (!seen.emplace(r.patient_id, r.visit).second)
            throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": duplicate (patient, visit) (" +
                                     r.patient_id + ", " + std::to_string(r.visit) + ")");
        for (const auto& fp : {r.image_path, r.label_path})
            if (!std::filesystem::exists(fp))
                throw std::runtime_error("manifest: line " + std::to_string(line_no) + ": referenced file '" +
                                         fp.string() + "' does not exist");
        records.push_back(std::move(r));
    }
    return records;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("manifest: cannot open '" + path.string() + "' for writing");
    os << "# patient_id, visit, image_path, label_path, center_tag\n";
    for (const auto& r : records)
        os << r.patient_id << ", " << r.visit << ", " << r.image_path.filename().string() << ", "
           << r.label_path.filename().string() << ", " << r.center_tag << "\n";
    if (!os) throw std::runtime_error("manifest: write failure on '" + path.string() + "'");
}

std::filesystem::path body_mask_path(const std::filesystem::path& image_path) {
    std::filesystem::path p = image_path;
    p.replace_extension(".body.mvf");
    return p;
}

}  // namespace fatseg
