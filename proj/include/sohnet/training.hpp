#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sohnet/autodiff.hpp"
#include "sohnet/dataset.hpp"
#include "sohnet/model.hpp"

namespace sohnet {

struct LossConfig {
    double gamma = 0.2;

    void validate() const;
};

/// γ·MSE(SOC) + (1−γ)/2·(MSE(SOH) + MSE(Q/Q_nom)), all on the tape.
ad::Var combined_loss(ad::Var soc_pred, ad::Var soc_target, ad::Var soh_pred, ad::Var soh_target, ad::Var q_pred,
                      ad::Var q_target, const LossConfig& config);

/// Same quantity from plain arrays; used for reporting and as a test oracle.
double combined_loss_value(std::span<const double> soc_pred, std::span<const double> soc_target,
                           std::span<const double> soh_pred, std::span<const double> soh_target,
                           std::span<const double> q_pred, std::span<const double> q_target,
                           const LossConfig& config);

/// One cycle of a mini-batch: 1-based segment positions fed to the encoder
/// (ascending) and the indices into `positions` that enter the SOH/Q mean.
struct BatchItem {
    const PreparedCell* cell = nullptr;
    const ResampledCycle* cycle = nullptr;
    std::vector<std::size_t> positions;
    std::vector<std::size_t> keep;
};

/// Combined loss of a mini-batch on the tape that `b` is bound to. Q targets
/// are normalized by the model's nominal capacity.
ad::Var batch_loss(const FullModel& model, const FullModel::Bound& b, std::span<const BatchItem> batch,
                   const LossConfig& loss);

struct TrainConfig {
    double lr0 = 3e-4;
    double weight_decay = 1e-6;
    std::size_t batch_cycles = 16;
    std::size_t epochs = 50;
    std::size_t sched_step_epochs = 10;
    double sched_factor = 0.5;
    std::size_t max_segments_per_cycle_train = 64;
    double keep_fraction_min = 0.5;
    double keep_fraction_max = 1.0;
    std::uint64_t seed = 42;
    /// Validation aggregates every `valid_stride`-th segment (1 = all).
    std::size_t valid_stride = 1;
    /// Cells at these temperatures are withheld from training and validation.
    std::vector<double> holdout_temperatures;

    void validate() const;
    /// Learning rate used during `epoch` (1-based).
    double lr_for_epoch(std::size_t epoch) const;
};

std::string train_config_to_json(const TrainConfig& train, const LossConfig& loss);
/// Fills any fields present in `json_text`; others keep their current values.
void apply_train_json(const std::string& json_text, TrainConfig& train, LossConfig& loss);

struct TraceRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_r2_q = 0.0;
    double valid_r2_soh = 0.0;
    double valid_r2_avg = 0.0;
    double lr = 0.0;
};

struct TrainState {
    std::size_t epoch = 0;
    double best_r2_avg = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<TraceRow> trace;
};

struct TrainResult {
    TrainState state;
    FullModel best;
    FullModel last;
};

struct TrainOutputs {
    /// When set, trace.csv, best.ckpt and last.ckpt are written here.
    std::optional<std::filesystem::path> dir;
    std::function<void(const TraceRow&)> on_epoch;
};

/// Text stored in every checkpoint: the model layout plus run settings.
std::string checkpoint_config(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss,
                              std::size_t epoch);
/// Model layout from a checkpoint's config text.
ModelConfig model_config_from_checkpoint(const std::string& config_text);

std::string trace_csv(const TrainState& state, std::uint64_t seed, const std::string& config_text);

/// Validation figures for model selection: pooled R²(Q), R²(SOH), R²_avg.
struct ValidationScore {
    double r2_q = 0.0;
    double r2_soh = 0.0;
    double r2_avg = 0.0;
};
ValidationScore validation_score(const FullModel& model, const Dataset& data, std::span<const CycleRef> refs,
                                 std::size_t stride);

TrainResult train(const Dataset& data, const ModelConfig& model_config, const LossConfig& loss,
                  const TrainConfig& config, const TrainOutputs& outputs = {});

}  // namespace sohnet
