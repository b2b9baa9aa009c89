#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sohnet/dataio.hpp"
#include "sohnet/tensor.hpp"

namespace sohnet {

struct WindowConfig {
    std::size_t window_size = 128;
    double period_s = kGridPeriodS;

    void validate() const;
};

/// One model input: row 0 holds the scaled voltage window, row 1 the scaled
/// current window, both ending at sample `position` (1-based).
struct Segment {
    Tensor feature;  // 2 × window_size
    double soc_target = 0.0;
    int cycle_index = 0;
    std::size_t position = 0;
};

struct CycleSegments {
    int cycle_index = 0;
    std::vector<Segment> segments;
    double soh_target = 0.0;
    double q_target_ah = 0.0;
    double temperature_c = 0.0;
};

/// Lazy sliding-window view over a resampled cycle. Segment s covers samples
/// s − window_size + 1 … s; samples before the start of charge read as 0
/// (the scaled value of the 2.15 V / 0.5 A prepend constants).
class CycleWindows {
public:
    CycleWindows(const ResampledCycle& cycle, WindowConfig config);
    CycleWindows(ResampledCycle&&, WindowConfig) = delete;  // would dangle

    std::size_t size() const noexcept { return cycle_->n_samples(); }
    std::size_t window_size() const noexcept { return config_.window_size; }
    const ResampledCycle& cycle() const noexcept { return *cycle_; }

    /// Writes the 2 × window_size feature of `position` (1-based) into `out`.
    void write_feature(std::size_t position, std::span<double> out) const;
    Segment segment(std::size_t position) const;

private:
    const ResampledCycle* cycle_;
    WindowConfig config_;
};

CycleSegments build_segments(const ResampledCycle& cycle, const WindowConfig& config,
                             double temperature_c);

/// (window_size − 1) × period_s.
double segment_time_span(const WindowConfig& config);

/// Debug dump, one row per segment row: cycle,position,row,values...
std::string segments_to_csv(const CycleSegments& segments);

}  // namespace sohnet
