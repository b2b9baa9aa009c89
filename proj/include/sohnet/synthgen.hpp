#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sohnet/dataio.hpp"

// Synthetic CC-CV charging cycles with a known capacity-fade law:
//
//   SOH(k, T) = 1 + early_rise·(1 − e^{−k/early_rise_cycles}) − fade_rate(T)·k
//
// floored at min_soh. CC phase charges cc_fraction·Q_k at cc_current with
// V(q) = v_start + (cv_voltage − v_start)·(q/q_cc)^cc_shape; the CV phase
// holds cv_voltage while I(t) = cc_current·e^{−t/τ} decays to the cutoff, with
// τ chosen so that it delivers the remaining (1 − cc_fraction)·Q_k.

namespace sohnet {

/// Lower CC voltage for a test temperature (piecewise linear over 0/25/35/45 °C).
double default_v_start(double temperature_c);
/// Per-cycle fractional capacity loss (piecewise linear, fastest at 0 °C).
double default_fade_rate(double temperature_c);

struct SynthCellParams {
    double q_nominal_ah = 10.0;
    double cc_current_a = 5.0;
    double cv_voltage_v = 4.0;
    double cv_cutoff_a = 0.5;
    std::optional<double> v_start_v;  // default_v_start(T) when unset
    std::optional<double> fade_rate;  // default_fade_rate(T) × per-cell jitter when unset
    double fade_jitter = 0.1;         // relative, uniform in ±fade_jitter
    double early_rise = 0.01;
    double early_rise_cycles = 100.0;
    double cc_fraction = 0.85;
    double cc_shape = 0.8;
    double sample_period_s = 30.0;
    double jitter_s = 3.0;
    double noise_v = 0.005;
    double noise_a = 0.02;
    double min_soh = 0.5;
    /// Optional step change in SOH from `regime_cycle` on (disabled when unset).
    std::optional<int> regime_cycle;
    double regime_jump = 0.0;

    void validate() const;
};

/// Parameters resolved for one cell: temperature defaults and jitter applied.
struct SynthCell {
    std::string label;
    double temperature_c = 25.0;
    int n_cycles = 200;
    std::uint64_t seed = 1;
    SynthCellParams params;
    double v_start_v = 0.0;
    double fade_rate = 0.0;
};

SynthCell make_synth_cell(std::string label, double temperature_c, int n_cycles, std::uint64_t seed,
                          const SynthCellParams& params = {});

double synth_soh(const SynthCell& cell, int k);
double synth_capacity(const SynthCell& cell, int k);
/// CV decay constant that balances the CV charge for capacity q_ah.
double cv_tau_s(const SynthCellParams& params, double q_ah);

struct SynthCycle {
    RawCycle raw;                 // noisy samples + discharge capacity
    std::vector<double> soc_true;  // noise-free SOC at each sample time
};

/// One cycle; draws jitter and noise from `rng` in sample order.
SynthCycle gen_cycle(const SynthCell& cell, int k, std::mt19937_64& rng);

struct SynthFiles {
    ManifestEntry entry;
    std::filesystem::path soc_sidecar;
    std::filesystem::path capacity_sidecar;
};

/// Writes <label>_profile.csv, <label>_capacity.csv and the two ground-truth
/// sidecars into `dir`. With n_parallel > 1 the files describe a parallel pack
/// of identical cells: currents and capacities are multiplied by n_parallel
/// after noise is drawn.
SynthFiles gen_cell(const SynthCell& cell, const std::filesystem::path& dir, int n_parallel = 1);

struct SynthDatasetConfig {
    std::vector<double> temperatures{0.0, 25.0, 45.0};
    int cells_per_temperature = 4;
    /// Extra temperatures (e.g. 35 °C) generated for transfer tests.
    std::vector<double> unseen_temperatures;
    int unseen_cells = 2;
    int n_cycles = 200;
    std::uint64_t seed = 42;
    int pack_n_parallel = 1;  // > 1 adds one pack
    double pack_temperature_c = 25.0;
    SynthCellParams params;
};

/// Generates every cell and writes manifest.json into `dir`.
Manifest gen_dataset(const SynthDatasetConfig& config, const std::filesystem::path& dir);

/// Seed of cell `index` derived from the dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace sohnet
