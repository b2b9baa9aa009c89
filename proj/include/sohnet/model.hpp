#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sohnet/autodiff.hpp"
#include "sohnet/node.hpp"
#include "sohnet/optim.hpp"
#include "sohnet/windowing.hpp"

// Joint SOC / SOH / capacity network:
//
//   segment 2×W ─► 1×2×W ─► Conv2D stack ─► C×2×W' ─► NODE ─► C×2×W'
//              ─► avg-pool ─► C×2×1 ─► flatten (2C) ─► SOC head ─► SOC
//   mean of a cycle's pooled features (2C) ⊕ temperature code ─► SOH/Q head
//
// With the defaults (W = 128, C = 64) the chain is
// 2×128 → 1×2×128 → 64×2×4 → 64×2×4 → 64×2×1 → 128, and the SOH/Q head
// consumes 128 + 32 = 160 features.

namespace sohnet {

struct ModelConfig {
    std::size_t window_size = 128;
    std::vector<std::size_t> encoder_channels{8, 16, 32, 64, 64};
    std::size_t encoder_kernel = 5;
    std::size_t encoder_stride = 2;
    std::size_t encoder_pad = 2;
    std::size_t node_hidden = 64;
    std::size_t node_kernel = 3;
    NodeConfig node;
    std::size_t soc_hidden = 64;
    std::size_t head_hidden = 64;
    std::size_t temp_bins = 9;
    std::size_t temp_embed_dim = 16;
    std::size_t temp_ffn_hidden = 16;
    std::size_t temp_ffn_dim = 16;
    double t_min_c = 0.0;
    double t_max_c = 45.0;
    double q_nominal_ah = 10.0;

    std::size_t feature_channels() const { return encoder_channels.back(); }
    /// Time-axis length after the encoder.
    std::size_t encoded_width() const;
    std::size_t pooled_dim() const { return 2 * feature_channels(); }
    std::size_t temperature_dim() const { return temp_embed_dim + temp_ffn_dim; }

    /// Expected per-segment shapes: input, with channel axis, after the
    /// encoder, after the NODE, after pooling, flattened.
    std::vector<Shape> shape_chain() const;

    /// Throws ErrorKind::Shape / ErrorKind::Config on an inconsistent layout.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct TemperatureCode {
    double normalized = 0.0;
    std::size_t bin = 0;
    bool out_of_range = false;  // more than 5 °C outside [t_min, t_max]
};

/// (T − T_min)/(T_max − T_min), bin = min(⌊T_norm·N_T⌋, N_T − 1) clamped at 0.
TemperatureCode temperature_code(const ModelConfig& config, double t_c);

class FullModel {
public:
    /// Fresh model with seeded initialization.
    FullModel(ModelConfig config, std::uint64_t seed);
    /// Model around existing parameters; every name and shape is checked.
    FullModel(ModelConfig config, ParamStore params);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    /// Parameters registered on a tape, plus named handles to them.
    struct Bound {
        std::vector<ad::Var> all;
        std::vector<ad::Var> enc_w, enc_b;
        DynamicsNet dynamics;
        ad::Var soc_w1, soc_b1, soc_w2, soc_b2;
        ad::Var temp_table, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        ad::Var head_w1, head_b1, head_w2, head_b2;
    };
    Bound bind(ad::Tape& tape) const;

    /// N×2×W (or N×1×2×W) features → N×2C pooled encodings. Every
    /// intermediate shape is checked against shape_chain(); when `observed`
    /// is given the per-sample shapes are appended to it.
    ad::Var encode(const Bound& b, ad::Var features, std::vector<Shape>* observed = nullptr) const;
    /// N×2C → N raw SOC outputs.
    ad::Var soc_head(const Bound& b, ad::Var pooled) const;
    /// One row per temperature: concat(embedding row, FFN(T_norm)).
    ad::Var temperature_features(const Bound& b, std::span<const double> temperatures_c) const;
    /// M×2C aggregated features and M×T temperature codes → M×2 (SOH, Q/Q_nom).
    ad::Var soh_q_head(const Bound& b, ad::Var aggregated, ad::Var temperature) const;

private:
    void init(std::uint64_t seed);
    void check_params() const;

    ModelConfig config_;
    ParamStore params_;
};

// Single-item inference entry points. Each runs on its own inference tape,
// so a const FullModel can be shared across threads.

/// 2×W feature → pooled encoding of length 2C.
Tensor encode_segment(const FullModel& model, const Tensor& feature,
                      std::vector<Shape>* observed = nullptr);
double predict_soc(const FullModel& model, const Tensor& pooled);

struct PooledFeature {
    std::size_t position = 0;
    Tensor pooled;
};
/// Mean of the pooled features, summed in ascending segment position.
Tensor aggregate_cycle(std::span<const PooledFeature> features);

Tensor encode_temperature(const FullModel& model, double t_c);

struct SohQ {
    double soh = 0.0;
    double q_ah = 0.0;
};
SohQ predict_soh_q(const FullModel& model, const Tensor& aggregated, const Tensor& t_num);

struct CyclePrediction {
    std::vector<std::size_t> positions;  // ascending
    std::vector<double> soc;             // one per position
    double soh = 0.0;
    double q_ah = 0.0;
};

/// SOC for every supplied segment; SOH and Q from the mean over `subset`
/// positions (all supplied segments when empty). Supplied order is irrelevant.
CyclePrediction predict_cycle(const FullModel& model, std::span<const Segment> segments,
                              const std::optional<std::vector<std::size_t>>& subset, double t_c);

/// Same result as predict_cycle over every window of the cycle, without
/// materializing the segments up front. Segments are encoded `chunk` at a time.
CyclePrediction predict_windows(const FullModel& model, const CycleWindows& windows,
                                const std::optional<std::vector<std::size_t>>& subset, double t_c,
                                std::size_t chunk = 256);

}  // namespace sohnet
