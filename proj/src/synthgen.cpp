#include "sohnet/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <json.hpp>

#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

namespace {

struct Knot {
    double t, v;
};

double interpolate(const std::array<Knot, 4>& knots, double t) {
    if (t <= knots.front().t) return knots.front().v;
    if (t >= knots.back().t) return knots.back().v;
    std::size_t i = 0;
    while (knots[i + 1].t < t) ++i;
    const double f = (t - knots[i].t) / (knots[i + 1].t - knots[i].t);
    return knots[i].v + (knots[i + 1].v - knots[i].v) * f;
}

constexpr std::array<Knot, 4> kVStart{{{0.0, 2.30}, {25.0, 2.18}, {35.0, 2.15}, {45.0, 2.12}}};
constexpr std::array<Knot, 4> kFade{{{0.0, 6.0e-4}, {25.0, 1.5e-4}, {35.0, 2.5e-4}, {45.0, 3.5e-4}}};

std::string params_json(const SynthCell& c, int n_parallel) {
    nlohmann::ordered_json j;
    j["label"] = c.label;
    j["temperature_c"] = c.temperature_c;
    j["n_cycles"] = c.n_cycles;
    j["seed"] = c.seed;
    j["n_parallel"] = n_parallel;
    j["q_nominal_ah"] = c.params.q_nominal_ah;
    j["cc_current_a"] = c.params.cc_current_a;
    j["cv_voltage_v"] = c.params.cv_voltage_v;
    j["cv_cutoff_a"] = c.params.cv_cutoff_a;
    j["v_start_v"] = c.v_start_v;
    j["fade_rate"] = c.fade_rate;
    j["early_rise"] = c.params.early_rise;
    j["early_rise_cycles"] = c.params.early_rise_cycles;
    j["cc_fraction"] = c.params.cc_fraction;
    j["cc_shape"] = c.params.cc_shape;
    j["sample_period_s"] = c.params.sample_period_s;
    j["jitter_s"] = c.params.jitter_s;
    j["noise_v"] = c.params.noise_v;
    j["noise_a"] = c.params.noise_a;
    return j.dump();
}

}  // namespace

double default_v_start(double temperature_c) { return interpolate(kVStart, temperature_c); }
double default_fade_rate(double temperature_c) { return interpolate(kFade, temperature_c); }

void SynthCellParams::validate() const {
    auto check = [](bool ok, const char* msg) {
        if (!ok) fail(ErrorKind::Config, std::string("synth params: ") + msg);
    };
    check(q_nominal_ah > 0.0, "q_nominal_ah must be positive");
    check(cc_current_a > 0.0, "cc_current_a must be positive");
    check(cv_cutoff_a > 0.0 && cv_cutoff_a < cc_current_a, "cv_cutoff_a must lie in (0, cc_current_a)");
    check(!fade_rate || *fade_rate >= 0.0, "fade_rate must be non-negative");
    check(fade_jitter >= 0.0 && fade_jitter < 1.0, "fade_jitter must lie in [0, 1)");
    check(cc_fraction > 0.0 && cc_fraction < 1.0, "cc_fraction must lie in (0, 1)");
    check(cc_shape > 0.0, "cc_shape must be positive");
    check(early_rise_cycles > 0.0, "early_rise_cycles must be positive");
    check(sample_period_s > 0.0, "sample_period_s must be positive");
    check(jitter_s >= 0.0 && 2.0 * jitter_s < sample_period_s, "jitter_s must be below half the sample period");
    check(noise_v >= 0.0 && noise_a >= 0.0, "noise levels must be non-negative");
    check(min_soh > 0.0, "min_soh must be positive");
    if (v_start_v) check(*v_start_v < cv_voltage_v, "v_start_v must be below cv_voltage_v");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 over the pair
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

SynthCell make_synth_cell(std::string label, double temperature_c, int n_cycles, std::uint64_t seed,
                          const SynthCellParams& params) {
    params.validate();
    if (n_cycles < 3) fail(ErrorKind::Config, "synth: n_cycles must be >= 3 so that cycle 3 exists");
    SynthCell c;
    c.label = std::move(label);
    c.temperature_c = temperature_c;
    c.n_cycles = n_cycles;
    c.seed = seed;
    c.params = params;
    c.v_start_v = params.v_start_v.value_or(default_v_start(temperature_c));
    if (!(c.v_start_v < params.cv_voltage_v)) fail(ErrorKind::Config, "synth: v_start must be below cv_voltage");
    if (params.fade_rate) {
        c.fade_rate = *params.fade_rate;
    } else {
        std::mt19937_64 rng(derive_seed(seed, 0xfade));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        c.fade_rate = default_fade_rate(temperature_c) * (1.0 + params.fade_jitter * u(rng));
    }
    for (int k = 1; k <= n_cycles; ++k) synth_soh(c, k);  // surfaces infeasible fade early
    return c;
}

double synth_soh(const SynthCell& cell, int k) {
    const auto& p = cell.params;
    double soh = 1.0 + p.early_rise * (1.0 - std::exp(-static_cast<double>(k) / p.early_rise_cycles)) -
                 cell.fade_rate * static_cast<double>(k);
    if (p.regime_cycle && k >= *p.regime_cycle) soh += p.regime_jump;
    if (!(soh > 0.0))
        fail(ErrorKind::Config, "synth: fade law drives capacity to zero by cycle " + std::to_string(k) + " of " +
                                    cell.label);
    return std::max(soh, p.min_soh);
}

double synth_capacity(const SynthCell& cell, int k) { return cell.params.q_nominal_ah * synth_soh(cell, k); }

double cv_tau_s(const SynthCellParams& p, double q_ah) {
    return (1.0 - p.cc_fraction) * q_ah * 3600.0 / (p.cc_current_a - p.cv_cutoff_a);
}

SynthCycle gen_cycle(const SynthCell& cell, int k, std::mt19937_64& rng) {
    const auto& p = cell.params;
    const double q = synth_capacity(cell, k);
    const double q_cc = p.cc_fraction * q;
    const double t_cc = q_cc * 3600.0 / p.cc_current_a;
    const double tau = cv_tau_s(p, q);
    const double t_end = t_cc + tau * std::log(p.cc_current_a / p.cv_cutoff_a);

    std::vector<double> times{0.0};
    std::uniform_real_distribution<double> jitter(-p.jitter_s, p.jitter_s);
    for (int j = 1;; ++j) {
        const double t = static_cast<double>(j) * p.sample_period_s + jitter(rng);
        if (t >= t_end) break;
        times.push_back(t);
    }
    // Final sample exactly at the cutoff; drop a grid sample that sits too close.
    if (t_end - times.back() < 0.5 && times.size() > 1) times.pop_back();
    times.push_back(t_end);

    SynthCycle out;
    out.raw.cycle_index = k;
    out.raw.discharge_capacity_ah = q;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double t : times) {
        double v, i, charged;
        if (t <= t_cc) {
            charged = p.cc_current_a * t / 3600.0;
            v = cell.v_start_v + (p.cv_voltage_v - cell.v_start_v) * std::pow(charged / q_cc, p.cc_shape);
            i = p.cc_current_a;
        } else {
            const double decay = std::exp(-(t - t_cc) / tau);
            charged = q_cc + p.cc_current_a * tau * (1.0 - decay) / 3600.0;
            v = p.cv_voltage_v;
            i = p.cc_current_a * decay;
        }
        if (p.noise_v > 0.0) v += p.noise_v * gauss(rng);
        if (p.noise_a > 0.0) i += p.noise_a * gauss(rng);
        out.raw.samples.push_back({t, v, i});
        out.soc_true.push_back(charged / q);
    }
    return out;
}

SynthFiles gen_cell(const SynthCell& cell, const std::filesystem::path& dir, int n_parallel) {
    if (n_parallel < 1) fail(ErrorKind::Config, "synth: n_parallel must be >= 1");
    std::filesystem::create_directories(dir);
    const double n = static_cast<double>(n_parallel);
    const std::string header = provenance_header(cell.seed, params_json(cell, n_parallel));

    std::string profile = header + "cycle,time_s,voltage_v,current_a\n";
    std::string capacity = header + "cycle,discharge_capacity_ah\n";
    std::string soc = header + "cycle,time_s,soc_true\n";
    std::vector<double> q_emitted;

    std::mt19937_64 rng(cell.seed);
    for (int k = 1; k <= cell.n_cycles; ++k) {
        const SynthCycle cy = gen_cycle(cell, k, rng);
        const std::string ks = std::to_string(k);
        for (std::size_t s = 0; s < cy.raw.samples.size(); ++s) {
            const auto& smp = cy.raw.samples[s];
            const std::string ts = format_double(smp.time_s);
            profile += ks;
            profile += ',';
            profile += ts;
            profile += ',';
            profile += format_double(smp.voltage_v);
            profile += ',';
            profile += format_double(n * smp.current_a);
            profile += '\n';
            soc += ks + ',' + ts + ',' + format_double(cy.soc_true[s]) + '\n';
        }
        const double q = n * cy.raw.discharge_capacity_ah;
        q_emitted.push_back(q);
        capacity += ks + ',' + format_double(q) + '\n';
    }
    std::string soh = header + "cycle,q_true_ah,soh_true\n";
    const double q3 = q_emitted[static_cast<std::size_t>(kReferenceCycle - 1)];
    for (std::size_t i = 0; i < q_emitted.size(); ++i)
        soh += std::to_string(i + 1) + ',' + format_double(q_emitted[i]) + ',' + format_double(q_emitted[i] / q3) + '\n';

    SynthFiles files;
    files.entry.label = cell.label;
    files.entry.temperature_c = cell.temperature_c;
    files.entry.profile_path = dir / (cell.label + "_profile.csv");
    files.entry.capacity_path = dir / (cell.label + "_capacity.csv");
    files.entry.n_parallel = n_parallel;
    files.soc_sidecar = dir / (cell.label + "_soc_true.csv");
    files.capacity_sidecar = dir / (cell.label + "_soh_true.csv");
    write_text_file(files.entry.profile_path, profile);
    write_text_file(files.entry.capacity_path, capacity);
    write_text_file(files.soc_sidecar, soc);
    write_text_file(files.capacity_sidecar, soh);
    return files;
}

Manifest gen_dataset(const SynthDatasetConfig& config, const std::filesystem::path& dir) {
    if (config.cells_per_temperature < 1) fail(ErrorKind::Config, "synth: cells_per_temperature must be >= 1");
    if (config.pack_n_parallel < 1) fail(ErrorKind::Config, "synth: n_parallel must be >= 1");
    std::vector<SynthCell> cells;
    std::uint64_t index = 0;
    auto label_for = [](const char* prefix, double t, int i) {
        return std::string(prefix) + std::to_string(static_cast<int>(std::lround(t))) + "C-" + std::to_string(i);
    };
    for (double t : config.temperatures)
        for (int i = 1; i <= config.cells_per_temperature; ++i)
            cells.push_back(make_synth_cell(label_for("cell-", t, i), t, config.n_cycles,
                                            derive_seed(config.seed, index++), config.params));
    for (double t : config.unseen_temperatures)
        for (int i = 1; i <= config.unseen_cells; ++i)
            cells.push_back(make_synth_cell(label_for("unseen-", t, i), t, config.n_cycles,
                                            derive_seed(config.seed, index++), config.params));

    Manifest relative;
    auto add = [&](const SynthFiles& f) {
        ManifestEntry e = f.entry;
        e.profile_path = e.profile_path.filename();
        e.capacity_path = e.capacity_path.filename();
        relative.cells.push_back(std::move(e));
    };
    std::vector<SynthFiles> files(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    const auto n = static_cast<std::int64_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            files[static_cast<std::size_t>(i)] = gen_cell(cells[static_cast<std::size_t>(i)], dir);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (const auto& f : files) add(f);
    if (config.pack_n_parallel > 1) {
        const SynthCell pack =
            make_synth_cell("pack-" + std::to_string(static_cast<int>(std::lround(config.pack_temperature_c))) + "C-x" +
                                std::to_string(config.pack_n_parallel),
                            config.pack_temperature_c, config.n_cycles, derive_seed(config.seed, 1000), config.params);
        add(gen_cell(pack, dir, config.pack_n_parallel));
    }
    write_text_file(dir / "manifest.json", manifest_to_json(relative));
    return read_manifest(dir / "manifest.json");
}

}  // namespace sohnet
