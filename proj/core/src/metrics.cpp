#include "fatseg/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fatseg {

double dice(const LabelMask& pred, const LabelMask& ref, std::uint8_t cls) {
    if (!(pred.dims == ref.dims))
        throw std::invalid_argument("dice: mask dims " + pred.dims.str() + " vs " + ref.dims.str() + " differ");
    std::int64_t inter = 0, x = 0, y = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool in_x = pred.labels[i] == cls, in_y = ref.labels[i] == cls;
        inter += in_x && in_y;
        x += in_x;
        y += in_y;
    }
    if (x + y == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(x + y);
}

double depot_volume_ml(const LabelMask& mask, std::uint8_t cls) {
    std::int64_t count = 0;
    for (auto v : mask.labels) count += v == cls;
    return static_cast<double>(count) * mask.spacing.voxel_mm3() / 1000.0;
}

VolumeErrors volume_errors(double pred_ml, double ref_ml) {
    if (ref_ml < 0) throw std::invalid_argument("volume_errors: reference volume must be >= 0");
    VolumeErrors e;
    e.signed_ml = pred_ml - ref_ml;
    if (ref_ml > 0) {
        e.abs_pct = std::abs(e.signed_ml) / ref_ml * 100.0;
    } else if (pred_ml == 0) {
        e.abs_pct = 0.0;
    } else {
        e.abs_pct = 0.0;
        e.pct_defined = false;
    }
    return e;
}

namespace {

ClassMetrics class_metrics(const LabelMask& pred, const LabelMask& ref, std::uint8_t cls) {
    ClassMetrics m;
    m.dice = dice(pred, ref, cls);
    m.pred_ml = depot_volume_ml(pred, cls);
    m.ref_ml = depot_volume_ml(ref, cls);
    const VolumeErrors e = volume_errors(m.pred_ml, m.ref_ml);
    m.signed_ml = e.signed_ml;
    m.abs_pct = e.abs_pct;
    m.pct_defined = e.pct_defined;
    return m;
}

Stat stat_of(const std::vector<double>& v) {
    Stat s;
    s.count = static_cast<std::int64_t>(v.size());
    if (v.empty()) return s;
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
    return s;
}

GroupAggregate aggregate_group(const std::string& center, std::span<const ScanMetrics> metrics) {
    GroupAggregate g;
    g.center = center;
    g.scans = static_cast<std::int64_t>(metrics.size());
    auto collect = [&](auto pick) {
        std::vector<double> dice_v, pct_v, ml_v;
        for (const auto& m : metrics) {
            const ClassMetrics& c = pick(m);
            dice_v.push_back(c.dice);
            ml_v.push_back(c.signed_ml);
            if (c.pct_defined) pct_v.push_back(c.abs_pct);
        }
        return ClassAggregate{stat_of(dice_v), stat_of(pct_v), stat_of(ml_v)};
    };
    g.vat = collect([](const ScanMetrics& m) -> const ClassMetrics& { return m.vat; });
    g.sat = collect([](const ScanMetrics& m) -> const ClassMetrics& { return m.sat; });
    return g;
}

}  // namespace

ScanMetrics evaluate_scan(const std::string& scan_id, const std::string& center, const LabelMask& pred,
                          const LabelMask& ref) {
    ScanMetrics m;
    m.scan_id = scan_id;
    m.center = center;
    m.vat = class_metrics(pred, ref, LabelMask::kVat);
    m.sat = class_metrics(pred, ref, LabelMask::kSat);
    return m;
}

AggregateReport aggregate(std::span<const ScanMetrics> metrics) {
    if (metrics.empty()) throw std::invalid_argument("aggregate: no scan metrics given");
    AggregateReport r;
    r.all = aggregate_group("all", metrics);

    std::vector<std::string> center_order;
    std::map<std::string, std::vector<ScanMetrics>> by_center;
    for (const auto& m : metrics) {
        if (!by_center.count(m.center)) center_order.push_back(m.center);
        by_center[m.center].push_back(m);
    }
    for (const auto& c : center_order) r.per_center.push_back(aggregate_group(c, by_center[c]));

    for (const auto& m : metrics)
        for (std::uint8_t cls : {LabelMask::kVat, LabelMask::kSat}) {
            const ClassMetrics& c = cls == LabelMask::kVat ? m.vat : m.sat;
            if (c.ref_ml <= 0) continue;
            r.scatter.push_back({c.ref_ml, c.pred_ml / c.ref_ml - 1.0, m.center, cls});
        }
    return r;
}

std::array<double, 2> compare_masks(const LabelMask& a, const LabelMask& b) {
    return {dice(a, b, LabelMask::kVat), dice(a, b, LabelMask::kSat)};
}

std::string format_double(double v) {
    // shortest representation that parses back to the same double, so CSV
    // round trips are exact
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_scan_metrics_csv(const std::filesystem::path& path, std::span<const ScanMetrics> metrics) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << "scan_id,center,depot,dice,pred_ml,ref_ml,signed_error_ml,abs_error_pct\n";
    for (const auto& m : metrics)
        for (std::uint8_t cls : {LabelMask::kVat, LabelMask::kSat}) {
            const ClassMetrics& c = cls == LabelMask::kVat ? m.vat : m.sat;
            os << m.scan_id << "," << m.center << "," << (cls == LabelMask::kVat ? "VAT" : "SAT") << ","
               << format_double(c.dice) << "," << format_double(c.pred_ml) << "," << format_double(c.ref_ml) << ","
               << format_double(c.signed_ml) << "," << (c.pct_defined ? format_double(c.abs_pct) : std::string("nan"))
               << "\n";
        }
}

std::vector<ScanMetrics> read_scan_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("scan metrics CSV '" + path.string() + "' is empty");

    std::map<std::string, ScanMetrics> by_scan;
    std::vector<std::string> order;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f;
        std::vector<std::string> fields;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 8)
            throw std::runtime_error("scan metrics CSV line " + std::to_string(line_no) + ": expected 8 fields");
        auto& m = by_scan[fields[0]];
        if (m.scan_id.empty()) {
            m.scan_id = fields[0];
            m.center = fields[1];
            order.push_back(fields[0]);
        }
        ClassMetrics& c = fields[2] == "VAT" ? m.vat : m.sat;
        c.dice = std::stod(fields[3]);
        c.pred_ml = std::stod(fields[4]);
        c.ref_ml = std::stod(fields[5]);
        c.signed_ml = std::stod(fields[6]);
        c.pct_defined = fields[7] != "nan";
        c.abs_pct = c.pct_defined ? std::stod(fields[7]) : 0.0;
    }
    std::vector<ScanMetrics> out;
    for (const auto& id : order) out.push_back(by_scan[id]);
    return out;
}

void write_aggregate_csv(const std::filesystem::path& path, const AggregateReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << "center,depot,metric,mean,std,count\n";
    auto emit = [&](const GroupAggregate& g) {
        auto row = [&](const char* depot, const char* metric, const Stat& s) {
            os << g.center << "," << depot << "," << metric << "," << format_double(s.mean) << "," << format_double(s.stddev)
               << "," << s.count << "\n";
        };
        row("VAT", "dice", g.vat.dice);
        row("VAT", "error_pct", g.vat.err_pct);
        row("VAT", "error_ml", g.vat.err_ml);
        row("SAT", "dice", g.sat.dice);
        row("SAT", "error_pct", g.sat.err_pct);
        row("SAT", "error_ml", g.sat.err_ml);
    };
    emit(report.all);
    if (report.per_center.size() > 1)
        for (const auto& g : report.per_center) emit(g);
}

void write_scatter_csv(const std::filesystem::path& path, const AggregateReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    os << "reference_ml,relative_signed_error,center_tag,depot\n";
    for (const auto& s : report.scatter)
        os << format_double(s.reference_ml) << "," << format_double(s.relative_signed_error) << "," << s.center << ","
           << (s.cls == LabelMask::kVat ? "VAT" : "SAT") << "\n";
}

}  // namespace fatseg
