#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Charging-profile ingestion: CSV parsing, uniform 30 s resampling, signal
// rescaling, and the per-sample / per-cycle learning targets.
//
// Profile CSV:  cycle,time_s,voltage_v,current_a   (rows sorted by cycle, time)
// Capacity CSV: cycle,discharge_capacity_ah
// Lines starting with '#' are comments and are skipped.

namespace sohnet {

inline constexpr double kVoltageLow = 2.15;
inline constexpr double kVoltageHigh = 4.0;
inline constexpr double kCurrentLow = 0.5;
inline constexpr double kCurrentHigh = 5.0;
inline constexpr double kGridPeriodS = 30.0;
inline constexpr double kTemperatureMinC = 0.0;
inline constexpr double kTemperatureMaxC = 45.0;
inline constexpr int kReferenceCycle = 3;

struct RawSample {
    double time_s = 0.0;
    double voltage_v = 0.0;
    double current_a = 0.0;
};

struct RawCycle {
    int cycle_index = 0;
    std::vector<RawSample> samples;
    double discharge_capacity_ah = 0.0;
};

struct CellMeta {
    std::string label;
    double temperature_c = 25.0;
    std::vector<int> excluded_cycles;
    int n_parallel = 1;
};

struct CellRecord {
    std::string label;
    double temperature_c = 25.0;
    std::vector<RawCycle> cycles;  // sorted by cycle_index
    double reference_capacity_ah = 0.0;
    std::vector<int> excluded_cycles;
    int n_parallel = 1;
};

struct UniformSeries {
    std::vector<double> times;
    std::vector<double> voltages;
    std::vector<double> currents;
};

struct ResampledCycle {
    int cycle_index = 0;
    double grid_period_s = kGridPeriodS;
    std::vector<double> v_scaled;
    std::vector<double> i_scaled;
    std::vector<double> soc_targets;
    double soh_target = 0.0;
    double q_target_ah = 0.0;

    std::size_t n_samples() const noexcept { return v_scaled.size(); }
};

/// Profile CSV alone, grouped by cycle (no capacities attached).
std::vector<RawCycle> parse_profile(std::string_view profile_text);

CellRecord parse_cell(std::string_view profile_text, std::string_view capacity_text,
                      const CellMeta& meta);

/// (v − 2.15)/(4 − 2.15), affine and unclamped.
double scale_voltage(double v);
/// (i − 0.5)/(5 − 0.5), affine and unclamped.
double scale_current(double i);

/// Piecewise-linear resampling onto t = 0, period, 2·period, … ≤ last raw time.
/// Grid points before the first raw sample take the first sample's values.
UniformSeries resample(const RawCycle& cycle, double period_s = kGridPeriodS);

/// Cumulative trapezoidal charge over the grid divided by the cycle total.
std::vector<double> compute_soc_targets(std::span<const double> currents_a, double period_s);

/// SOH_k = Q_k / Q_3.
double compute_soh(double q_k, double q_3);

/// Resample and rescale only; targets are left empty (inference input).
ResampledCycle resample_features(const RawCycle& cycle, double period_s = kGridPeriodS);

/// Resample, rescale and attach SOC/SOH/Q targets for one cycle.
ResampledCycle prepare_cycle(const RawCycle& cycle, double reference_capacity_ah,
                             double period_s = kGridPeriodS);

struct CycleSplit {
    std::vector<int> train;
    std::vector<int> valid;
    std::vector<int> test;
};

/// Chronological 70:10:20 split of the record's cycles (floor rule).
CycleSplit split_cycles(const CellRecord& record);
CycleSplit split_cycle_indices(std::span<const int> sorted_cycle_indices);

struct ManifestEntry {
    std::string label;
    double temperature_c = 25.0;
    std::filesystem::path profile_path;
    std::filesystem::path capacity_path;
    std::vector<int> excluded_cycles;
    int n_parallel = 1;
};

struct Manifest {
    std::vector<ManifestEntry> cells;
};

/// JSON manifest. Relative paths are resolved against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const Manifest& manifest);

CellRecord load_cell(const ManifestEntry& entry);

}  // namespace sohnet
