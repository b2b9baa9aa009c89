#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sohnet/dataset.hpp"
#include "sohnet/model.hpp"

namespace sohnet {

/// 1 − SS_res/SS_tot. Throws ErrorKind::Input when n < 2, the lengths differ,
/// or the truth is constant (R² undefined).
double r2(std::span<const double> pred, std::span<const double> truth);
/// Mean of the capacity and SOH R² values used for model selection.
double r2_avg(double r2_q, double r2_soh);
double mean_squared_error(std::span<const double> pred, std::span<const double> truth);
double mean_absolute_error(std::span<const double> pred, std::span<const double> truth);
double max_absolute_error(std::span<const double> pred, std::span<const double> truth);

/// Predicted capacity over the true reference capacity.
double soh_cali(double q_pred_ah, double q3_true_ah);

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct TargetMetrics {
    std::size_t count = 0;
    double r2 = kUndefined;  // NaN when the truth is constant
    double mse = 0.0;
    double mae = 0.0;
    double max_abs_err = 0.0;
    double max_abs_err_pct = kUndefined;  // SOH targets only: 100 × max_abs_err
};

TargetMetrics target_metrics(std::span<const double> pred, std::span<const double> truth, bool percent);

struct CycleResult {
    std::string cell;
    int cycle = 0;
    double temperature_c = 0.0;
    int n_parallel = 1;
    double q_true = 0.0;  // unit capacity (× n_parallel for packs)
    double q_pred = 0.0;
    double soh_true = 0.0;
    double soh_pred = 0.0;
    double soh_cali = 0.0;
    std::vector<double> soc_true;
    std::vector<double> soc_pred;
};

struct TemperatureMetrics {
    double temperature_c = 0.0;
    std::size_t cycles = 0;
    std::size_t segments = 0;
    TargetMetrics soc, q, soh_pred, soh_cali;
};

struct EvalReport {
    std::string split;
    std::size_t cells = 0;
    std::size_t cycles = 0;
    std::size_t segments = 0;
    TargetMetrics soc, q, soh_pred, soh_cali;
    std::vector<TemperatureMetrics> by_temperature;
    std::vector<CycleResult> results;  // canonical (cell, cycle) order
};

/// Anything that can produce per-cycle predictions for a prepared cycle.
class CyclePredictor {
public:
    virtual ~CyclePredictor() = default;
    /// Per-cell units; `subset` selects positions for the SOH/Q aggregation.
    virtual CyclePrediction predict(const PreparedCell& cell, const ResampledCycle& cycle,
                                    const std::optional<std::vector<std::size_t>>& subset) const = 0;
};

class ModelPredictor final : public CyclePredictor {
public:
    explicit ModelPredictor(const FullModel& model, std::size_t chunk = 64) : model_(model), chunk_(chunk) {}
    CyclePrediction predict(const PreparedCell& cell, const ResampledCycle& cycle,
                            const std::optional<std::vector<std::size_t>>& subset) const override;

private:
    const FullModel& model_;
    std::size_t chunk_;
};

/// Returns the stored targets: the perfect predictor.
class OraclePredictor final : public CyclePredictor {
public:
    CyclePrediction predict(const PreparedCell& cell, const ResampledCycle& cycle,
                            const std::optional<std::vector<std::size_t>>& subset) const override;
};

struct EvalOptions {
    std::string split_name = "test";
    /// Fixed per-cell Q_3 for SOH_cali instead of each cell's true Q_3.
    std::optional<double> fixed_q3_ah;
};

/// Cycles are predicted in parallel; results are gathered in `refs` order.
EvalReport evaluate(const CyclePredictor& predictor, const Dataset& data, std::span<const CycleRef> refs,
                    const EvalOptions& options = {});

std::string report_to_json(const EvalReport& report);
/// cell,cycle,q_true,q_pred,soh_true,soh_pred,soh_cali
std::string predictions_csv(const EvalReport& report);
/// cell,cycle,position,soc_true,soc_pred
std::string soc_parity_csv(const EvalReport& report);
/// cell,temperature_c,cycle,soh_true,soh_pred,soh_cali
std::string soh_trace_csv(const EvalReport& report);

struct PackPrediction {
    std::vector<std::size_t> positions;
    std::vector<double> soc;
    double soh = 0.0;
    double cell_q_ah = 0.0;
    double pack_q_ah = 0.0;
};

/// Parallel pack inference: the unit current is divided by n_parallel, the
/// single-cell pipeline runs on the result, and capacity is scaled back by n.
PackPrediction pack_predict(const FullModel& model, const RawCycle& unit_cycle, int n_parallel, double temperature_c,
                            const std::optional<std::vector<std::size_t>>& subset = std::nullopt,
                            double period_s = kGridPeriodS);

}  // namespace sohnet
