#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sohnet/dataio.hpp"

// Prepared (resampled, rescaled, target-annotated) cells ready for training
// and evaluation, plus a binary cache so repeated runs skip CSV parsing.

namespace sohnet {

enum class Split { Train, Valid, Test, All };

const char* to_string(Split split);
Split parse_split(const std::string& name);

/// One cell after preparation. Parallel packs are stored in per-cell units
/// (current and capacity divided by n_parallel); reports scale back up.
struct PreparedCell {
    std::string label;
    double temperature_c = 25.0;
    int n_parallel = 1;
    double q3_ah = 0.0;  // per-cell reference capacity
    std::vector<ResampledCycle> cycles;
    std::vector<Split> cycle_split;  // parallel to `cycles`
};

struct Dataset {
    std::vector<PreparedCell> cells;
    double period_s = kGridPeriodS;

    std::size_t cycle_count() const;
    std::size_t sample_count() const;
};

struct CycleRef {
    std::size_t cell = 0;
    std::size_t cycle = 0;  // index into cells[cell].cycles
};

/// Per-cell view of a parallel pack: current and capacity divided by n.
RawCycle per_cell_cycle(const RawCycle& unit, int n_parallel);

PreparedCell prepare_cell(const CellRecord& record, double period_s = kGridPeriodS);
Dataset prepare_dataset(const Manifest& manifest, double period_s = kGridPeriodS);

struct CycleFilter {
    Split split = Split::All;
    bool single_cells_only = false;       // drop n_parallel > 1
    std::vector<double> exclude_temperatures;
    std::vector<double> only_temperatures;  // empty = no restriction
};

/// Cycles matching the filter, in canonical (cell, cycle) order.
std::vector<CycleRef> select_cycles(const Dataset& data, const CycleFilter& filter);

std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::string& bytes);

struct SplitCounts {
    std::size_t cycles = 0;
    std::size_t segments = 0;
};

/// Human-readable per-cell and per-split cycle/segment counts.
std::string dataset_summary(const Dataset& data);

}  // namespace sohnet
