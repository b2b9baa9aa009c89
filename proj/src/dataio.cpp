#include "sohnet/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

namespace {

struct Line {
    std::size_t number;
    std::string_view text;
};

/// Non-empty, non-comment lines with 1-based line numbers.
std::vector<Line> content_lines(std::string_view text) {
    std::vector<Line> lines;
    std::size_t number = 0, start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        const std::string_view raw =
            text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        ++number;
        const std::string_view t = trim(raw);
        if (!t.empty() && t.front() != '#') lines.push_back({number, t});
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

double parse_real(std::string_view field, std::size_t line, const char* what) {
    field = trim(field);
    double v = 0.0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v))
        fail(ErrorKind::Parse, "line " + std::to_string(line) + ": invalid " + what + " '" +
                                   std::string(field) + "'");
    return v;
}

int parse_int(std::string_view field, std::size_t line, const char* what) {
    field = trim(field);
    int v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        fail(ErrorKind::Parse, "line " + std::to_string(line) + ": invalid " + what + " '" +
                                   std::string(field) + "'");
    return v;
}

void expect_header(const std::vector<Line>& lines, std::string_view header, const char* file) {
    if (lines.empty()) fail(ErrorKind::Parse, std::string(file) + ": empty file");
    std::string norm;
    for (auto f : split_csv_line(lines.front().text)) {
        if (!norm.empty()) norm += ',';
        norm += trim(f);
    }
    if (norm != header)
        fail(ErrorKind::Parse, std::string(file) + " line " + std::to_string(lines.front().number) +
                                   ": expected header '" + std::string(header) + "'");
    if (lines.size() < 2) fail(ErrorKind::Parse, std::string(file) + ": no data rows");
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string(what) + ": non-finite input");
}

}  // namespace

double scale_voltage(double v) {
    require_finite(v, "scale_voltage");
    return (v - kVoltageLow) / (kVoltageHigh - kVoltageLow);
}

double scale_current(double i) {
    require_finite(i, "scale_current");
    return (i - kCurrentLow) / (kCurrentHigh - kCurrentLow);
}

std::vector<RawCycle> parse_profile(std::string_view profile_text) {
    const auto profile = content_lines(profile_text);
    expect_header(profile, "cycle,time_s,voltage_v,current_a", "profile");
    std::map<int, RawCycle> cycles;
    int last_cycle = 0;
    for (std::size_t k = 1; k < profile.size(); ++k) {
        const auto& [number, text] = profile[k];
        const auto fields = split_csv_line(text);
        if (fields.size() != 4)
            fail(ErrorKind::Parse, "profile line " + std::to_string(number) + ": expected 4 fields, got " +
                                       std::to_string(fields.size()));
        const int cycle = parse_int(fields[0], number, "cycle");
        RawSample s{parse_real(fields[1], number, "time_s"), parse_real(fields[2], number, "voltage_v"),
                    parse_real(fields[3], number, "current_a")};
        if (cycle < 1) fail(ErrorKind::Parse, "profile line " + std::to_string(number) + ": cycle must be positive");
        if (s.time_s < 0.0)
            fail(ErrorKind::Parse, "profile line " + std::to_string(number) + ": negative time");
        if (cycle < last_cycle)
            fail(ErrorKind::Schema, "profile line " + std::to_string(number) + ": rows not sorted by cycle");
        auto& rc = cycles[cycle];
        rc.cycle_index = cycle;
        if (!rc.samples.empty() && s.time_s <= rc.samples.back().time_s)
            fail(ErrorKind::Schema, "profile line " + std::to_string(number) +
                                        ": time_s not strictly increasing within cycle " +
                                        std::to_string(cycle));
        rc.samples.push_back(s);
        last_cycle = cycle;
    }
    std::vector<RawCycle> out;
    for (auto& [index, rc] : cycles) out.push_back(std::move(rc));
    return out;
}

CellRecord parse_cell(std::string_view profile_text, std::string_view capacity_text,
                      const CellMeta& meta) {
    if (!(meta.temperature_c >= kTemperatureMinC && meta.temperature_c <= kTemperatureMaxC))
        fail(ErrorKind::Config, "cell " + meta.label + ": temperature " +
                                    format_double(meta.temperature_c) + " C outside [0, 45]");
    if (meta.n_parallel < 1)
        fail(ErrorKind::Config, "cell " + meta.label + ": n_parallel must be >= 1");

    std::map<int, RawCycle> cycles;
    for (auto& rc : parse_profile(profile_text)) cycles.emplace(rc.cycle_index, std::move(rc));

    const auto capacity = content_lines(capacity_text);
    expect_header(capacity, "cycle,discharge_capacity_ah", "capacity");
    std::map<int, double> capacities;
    for (std::size_t k = 1; k < capacity.size(); ++k) {
        const auto& [number, text] = capacity[k];
        const auto fields = split_csv_line(text);
        if (fields.size() != 2)
            fail(ErrorKind::Parse, "capacity line " + std::to_string(number) + ": expected 2 fields, got " +
                                       std::to_string(fields.size()));
        const int cycle = parse_int(fields[0], number, "cycle");
        const double q = parse_real(fields[1], number, "discharge_capacity_ah");
        if (q <= 0.0)
            fail(ErrorKind::Schema, "capacity line " + std::to_string(number) + ": capacity must be positive");
        if (!capacities.emplace(cycle, q).second)
            fail(ErrorKind::Schema, "capacity line " + std::to_string(number) + ": duplicate cycle " +
                                        std::to_string(cycle));
    }

    CellRecord rec;
    rec.label = meta.label;
    rec.temperature_c = meta.temperature_c;
    rec.excluded_cycles = meta.excluded_cycles;
    rec.n_parallel = meta.n_parallel;
    const std::set<int> excluded(meta.excluded_cycles.begin(), meta.excluded_cycles.end());
    for (auto& [index, rc] : cycles) {
        if (excluded.contains(index)) continue;
        auto it = capacities.find(index);
        if (it == capacities.end())
            fail(ErrorKind::Schema, "cell " + meta.label + ": no capacity row for cycle " + std::to_string(index));
        if (rc.samples.size() < 2)
            fail(ErrorKind::Schema, "cell " + meta.label + ": cycle " + std::to_string(index) +
                                        " has fewer than 2 samples");
        rc.discharge_capacity_ah = it->second;
        rec.cycles.push_back(std::move(rc));
    }
    auto ref = capacities.find(kReferenceCycle);
    if (ref == capacities.end())
        fail(ErrorKind::Reference, "cell " + meta.label + ": capacity of reference cycle 3 missing");
    rec.reference_capacity_ah = ref->second;
    return rec;
}

UniformSeries resample(const RawCycle& cycle, double period_s) {
    const auto& s = cycle.samples;
    if (s.size() < 2) fail(ErrorKind::Input, "resample: cycle needs at least 2 samples");
    if (!(period_s > 0.0)) fail(ErrorKind::Input, "resample: period must be positive");
    for (std::size_t k = 1; k < s.size(); ++k)
        if (!(s[k].time_s > s[k - 1].time_s))
            fail(ErrorKind::Input, "resample: duplicate or decreasing timestamp at sample " +
                                       std::to_string(k) + " of cycle " +
                                       std::to_string(cycle.cycle_index));
    if (s.front().time_s < 0.0) fail(ErrorKind::Input, "resample: negative timestamp");

    UniformSeries out;
    const auto n_grid = static_cast<std::size_t>(std::floor(s.back().time_s / period_s)) + 1;
    out.times.reserve(n_grid);
    out.voltages.reserve(n_grid);
    out.currents.reserve(n_grid);
    std::size_t seg = 0;
    for (std::size_t g = 0; g < n_grid; ++g) {
        const double t = static_cast<double>(g) * period_s;
        out.times.push_back(t);
        if (t <= s.front().time_s) {
            out.voltages.push_back(s.front().voltage_v);
            out.currents.push_back(s.front().current_a);
            continue;
        }
        while (seg + 1 < s.size() && s[seg + 1].time_s <= t) ++seg;
        if (s[seg].time_s == t || seg + 1 == s.size()) {
            out.voltages.push_back(s[seg].voltage_v);
            out.currents.push_back(s[seg].current_a);
            continue;
        }
        const RawSample& a = s[seg];
        const RawSample& b = s[seg + 1];
        const double frac = (t - a.time_s) / (b.time_s - a.time_s);
        out.voltages.push_back(a.voltage_v + (b.voltage_v - a.voltage_v) * frac);
        out.currents.push_back(a.current_a + (b.current_a - a.current_a) * frac);
    }
    return out;
}

std::vector<double> compute_soc_targets(std::span<const double> currents_a, double period_s) {
    if (currents_a.empty()) fail(ErrorKind::Input, "compute_soc_targets: empty series");
    std::vector<double> charge(currents_a.size(), 0.0);
    for (std::size_t k = 0; k < currents_a.size(); ++k) {
        if (!(currents_a[k] >= 0.0))
            fail(ErrorKind::Input, "compute_soc_targets: negative or non-finite current at point " +
                                       std::to_string(k));
        if (k > 0) charge[k] = charge[k - 1] + 0.5 * (currents_a[k - 1] + currents_a[k]) * period_s;
    }
    const double total = charge.back();
    if (!(total > 0.0)) fail(ErrorKind::Input, "compute_soc_targets: degenerate cycle with zero total charge");
    for (double& c : charge) c /= total;
    return charge;
}

double compute_soh(double q_k, double q_3) {
    if (!(q_3 > 0.0)) fail(ErrorKind::Reference, "compute_soh: reference capacity must be positive");
    return q_k / q_3;
}

ResampledCycle resample_features(const RawCycle& cycle, double period_s) {
    const UniformSeries series = resample(cycle, period_s);
    ResampledCycle out;
    out.cycle_index = cycle.cycle_index;
    out.grid_period_s = period_s;
    out.v_scaled.reserve(series.times.size());
    out.i_scaled.reserve(series.times.size());
    for (std::size_t k = 0; k < series.times.size(); ++k) {
        out.v_scaled.push_back(scale_voltage(series.voltages[k]));
        out.i_scaled.push_back(scale_current(series.currents[k]));
    }
    return out;
}

ResampledCycle prepare_cycle(const RawCycle& cycle, double reference_capacity_ah, double period_s) {
    const UniformSeries series = resample(cycle, period_s);
    ResampledCycle out;
    out.cycle_index = cycle.cycle_index;
    out.grid_period_s = period_s;
    out.v_scaled.reserve(series.times.size());
    out.i_scaled.reserve(series.times.size());
    for (std::size_t k = 0; k < series.times.size(); ++k) {
        out.v_scaled.push_back(scale_voltage(series.voltages[k]));
        out.i_scaled.push_back(scale_current(series.currents[k]));
    }
    out.soc_targets = compute_soc_targets(series.currents, period_s);
    out.q_target_ah = cycle.discharge_capacity_ah;
    out.soh_target = compute_soh(cycle.discharge_capacity_ah, reference_capacity_ah);
    return out;
}

CycleSplit split_cycle_indices(std::span<const int> sorted_cycle_indices) {
    const std::size_t n = sorted_cycle_indices.size();
    if (n < 10)
        fail(ErrorKind::Split, "split: need at least 10 cycles, got " + std::to_string(n));
    const std::size_t n_train = 7 * n / 10;
    const std::size_t n_valid = n / 10;
    CycleSplit split;
    split.train.assign(sorted_cycle_indices.begin(), sorted_cycle_indices.begin() + n_train);
    split.valid.assign(sorted_cycle_indices.begin() + n_train,
                       sorted_cycle_indices.begin() + n_train + n_valid);
    split.test.assign(sorted_cycle_indices.begin() + n_train + n_valid, sorted_cycle_indices.end());
    return split;
}

CycleSplit split_cycles(const CellRecord& record) {
    std::vector<int> indices;
    for (const auto& c : record.cycles) indices.push_back(c.cycle_index);
    return split_cycle_indices(indices);
}

Manifest read_manifest(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, "manifest " + path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    Manifest m;
    try {
        for (const auto& c : j.at("cells")) {
            ManifestEntry e;
            e.label = c.at("label").get<std::string>();
            e.temperature_c = c.at("temperature_c").get<double>();
            e.profile_path = c.at("profile_path").get<std::string>();
            e.capacity_path = c.at("capacity_path").get<std::string>();
            if (e.profile_path.is_relative()) e.profile_path = base / e.profile_path;
            if (e.capacity_path.is_relative()) e.capacity_path = base / e.capacity_path;
            if (c.contains("excluded_cycles")) e.excluded_cycles = c["excluded_cycles"].get<std::vector<int>>();
            e.n_parallel = c.value("n_parallel", 1);
            m.cells.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, "manifest " + path.string() + ": " + e.what());
    }
    return m;
}

std::string manifest_to_json(const Manifest& manifest) {
    nlohmann::ordered_json j;
    j["format"] = "sohnet-manifest";
    j["version"] = 1;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& e : manifest.cells) {
        nlohmann::ordered_json c;
        c["label"] = e.label;
        c["temperature_c"] = e.temperature_c;
        c["profile_path"] = e.profile_path.generic_string();
        c["capacity_path"] = e.capacity_path.generic_string();
        c["excluded_cycles"] = e.excluded_cycles;
        c["n_parallel"] = e.n_parallel;
        j["cells"].push_back(std::move(c));
    }
    return j.dump(2) + "\n";
}

CellRecord load_cell(const ManifestEntry& entry) {
    CellMeta meta{entry.label, entry.temperature_c, entry.excluded_cycles, entry.n_parallel};
    try {
        return parse_cell(read_text_file(entry.profile_path), read_text_file(entry.capacity_path), meta);
    } catch (const Error& e) {
        throw Error(e.kind(), "cell " + entry.label + ": " + e.what());
    }
}

}  // namespace sohnet
