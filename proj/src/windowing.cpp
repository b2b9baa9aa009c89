#include "sohnet/windowing.hpp"

#include <algorithm>

#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

void WindowConfig::validate() const {
    if (window_size < 2) fail(ErrorKind::Config, "window_size must be >= 2");
    if (!(period_s > 0.0)) fail(ErrorKind::Config, "period_s must be positive");
}

CycleWindows::CycleWindows(const ResampledCycle& cycle, WindowConfig config)
    : cycle_(&cycle), config_(config) {
    config_.validate();
    if (cycle.n_samples() == 0) fail(ErrorKind::Input, "cannot window an empty cycle");
    if (cycle.i_scaled.size() != cycle.n_samples() ||
        (!cycle.soc_targets.empty() && cycle.soc_targets.size() != cycle.n_samples()))
        fail(ErrorKind::Input, "cycle " + std::to_string(cycle.cycle_index) + ": series lengths differ");
}

void CycleWindows::write_feature(std::size_t position, std::span<double> out) const {
    const std::size_t w = config_.window_size;
    if (position < 1 || position > size())
        fail(ErrorKind::Index, "segment position " + std::to_string(position) + " outside 1.." +
                                   std::to_string(size()));
    if (out.size() != 2 * w) fail(ErrorKind::Shape, "segment buffer must hold 2 x window_size values");
    // Window entry k reads 0-based sample position − w + k; the first `pad` entries precede the data.
    const std::size_t pad = position < w ? w - position : 0;
    const std::size_t first = position + pad - w;
    std::fill_n(out.begin(), pad, 0.0);
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(w), pad, 0.0);
    std::copy_n(cycle_->v_scaled.begin() + static_cast<std::ptrdiff_t>(first), w - pad,
                out.begin() + static_cast<std::ptrdiff_t>(pad));
    std::copy_n(cycle_->i_scaled.begin() + static_cast<std::ptrdiff_t>(first), w - pad,
                out.begin() + static_cast<std::ptrdiff_t>(w + pad));
}

Segment CycleWindows::segment(std::size_t position) const {
    Segment s;
    s.feature = Tensor({2, config_.window_size});
    write_feature(position, s.feature.data());
    if (!cycle_->soc_targets.empty()) s.soc_target = cycle_->soc_targets[position - 1];
    s.cycle_index = cycle_->cycle_index;
    s.position = position;
    return s;
}

CycleSegments build_segments(const ResampledCycle& cycle, const WindowConfig& config,
                             double temperature_c) {
    const CycleWindows windows(cycle, config);
    CycleSegments out;
    out.cycle_index = cycle.cycle_index;
    out.soh_target = cycle.soh_target;
    out.q_target_ah = cycle.q_target_ah;
    out.temperature_c = temperature_c;
    out.segments.reserve(windows.size());
    for (std::size_t s = 1; s <= windows.size(); ++s) out.segments.push_back(windows.segment(s));
    return out;
}

double segment_time_span(const WindowConfig& config) {
    return static_cast<double>(config.window_size - 1) * config.period_s;
}

std::string segments_to_csv(const CycleSegments& segments) {
    std::string out = "cycle,position,row,values\n";
    for (const Segment& s : segments.segments) {
        const std::size_t w = s.feature.dim(1);
        for (std::size_t row = 0; row < 2; ++row) {
            out += std::to_string(s.cycle_index) + "," + std::to_string(s.position) + "," +
                   std::to_string(row);
            for (std::size_t k = 0; k < w; ++k) out += "," + format_double(s.feature[row * w + k]);
            out += "\n";
        }
    }
    return out;
}

}  // namespace sohnet
