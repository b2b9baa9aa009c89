#include "sohnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth, const char* what) {
    if (pred.size() != truth.size())
        fail(ErrorKind::Input, std::string(what) + ": " + std::to_string(pred.size()) + " predictions vs " +
                                   std::to_string(truth.size()) + " targets");
    if (pred.empty()) fail(ErrorKind::Input, std::string(what) + ": empty input");
}

nlohmann::ordered_json number(double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json metrics_json(const TargetMetrics& m) {
    nlohmann::ordered_json j;
    j["count"] = m.count;
    j["r2"] = number(m.r2);
    j["mse"] = number(m.mse);
    j["mae"] = number(m.mae);
    j["max_abs_err"] = number(m.max_abs_err);
    if (!std::isnan(m.max_abs_err_pct)) j["max_abs_err_pct"] = number(m.max_abs_err_pct);
    return j;
}

struct Pool {
    std::vector<double> soc_p, soc_t, q_p, q_t, sp_p, sp_t, sc_p;

    void add(const CycleResult& r) {
        soc_p.insert(soc_p.end(), r.soc_pred.begin(), r.soc_pred.end());
        soc_t.insert(soc_t.end(), r.soc_true.begin(), r.soc_true.end());
        q_p.push_back(r.q_pred);
        q_t.push_back(r.q_true);
        sp_p.push_back(r.soh_pred);
        sp_t.push_back(r.soh_true);
        sc_p.push_back(r.soh_cali);
    }

    void fill(TargetMetrics& soc, TargetMetrics& q, TargetMetrics& soh_pred, TargetMetrics& soh_cali) const {
        soc = target_metrics(soc_p, soc_t, false);
        q = target_metrics(q_p, q_t, false);
        soh_pred = target_metrics(sp_p, sp_t, true);
        soh_cali = target_metrics(sc_p, sp_t, true);
    }
};

}  // namespace

double r2(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, "r2");
    if (truth.size() < 2) fail(ErrorKind::Input, "r2: need at least 2 points");
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (!(ss_tot > 0.0)) fail(ErrorKind::Input, "r2: truth is constant, R² undefined");
    return 1.0 - ss_res / ss_tot;
}

double r2_avg(double r2_q, double r2_soh) { return 0.5 * (r2_q + r2_soh); }

double mean_squared_error(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return acc / static_cast<double>(pred.size());
}

double mean_absolute_error(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
    return acc / static_cast<double>(pred.size());
}

double max_absolute_error(std::span<const double> pred, std::span<const double> truth) {
    check_pair(pred, truth, "max_abs_err");
    double m = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) m = std::max(m, std::abs(pred[i] - truth[i]));
    return m;
}

double soh_cali(double q_pred_ah, double q3_true_ah) {
    if (!(q3_true_ah > 0.0) || !std::isfinite(q3_true_ah))
        fail(ErrorKind::Reference, "soh_cali: reference capacity must be positive");
    return q_pred_ah / q3_true_ah;
}

TargetMetrics target_metrics(std::span<const double> pred, std::span<const double> truth, bool percent) {
    TargetMetrics m;
    m.count = pred.size();
    m.mse = mean_squared_error(pred, truth);
    m.mae = mean_absolute_error(pred, truth);
    m.max_abs_err = max_absolute_error(pred, truth);
    if (percent) m.max_abs_err_pct = 100.0 * m.max_abs_err;
    try {
        m.r2 = r2(pred, truth);
    } catch (const Error&) {
        m.r2 = kUndefined;
    }
    return m;
}

CyclePrediction ModelPredictor::predict(const PreparedCell& cell, const ResampledCycle& cycle,
                                        const std::optional<std::vector<std::size_t>>& subset) const {
    const CycleWindows windows(cycle, WindowConfig{model_.config().window_size, cycle.grid_period_s});
    return predict_windows(model_, windows, subset, cell.temperature_c, chunk_);
}

CyclePrediction OraclePredictor::predict(const PreparedCell&, const ResampledCycle& cycle,
                                         const std::optional<std::vector<std::size_t>>&) const {
    CyclePrediction p;
    p.positions.resize(cycle.n_samples());
    for (std::size_t i = 0; i < p.positions.size(); ++i) p.positions[i] = i + 1;
    p.soc = cycle.soc_targets;
    p.soh = cycle.soh_target;
    p.q_ah = cycle.q_target_ah;
    return p;
}

EvalReport evaluate(const CyclePredictor& predictor, const Dataset& data, std::span<const CycleRef> refs,
                    const EvalOptions& options) {
    if (refs.empty()) fail(ErrorKind::Split, "evaluate: split '" + options.split_name + "' has no cycles");
    for (const auto& r : refs)
        if (r.cell >= data.cells.size() || r.cycle >= data.cells[r.cell].cycles.size())
            fail(ErrorKind::Index, "evaluate: cycle reference out of range");

    std::vector<CycleResult> results(refs.size());
    std::vector<std::exception_ptr> errors(refs.size());
    const auto n = static_cast<std::int64_t>(refs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const auto& cell = data.cells[refs[i].cell];
            const auto& cycle = cell.cycles[refs[i].cycle];
            const CyclePrediction p = predictor.predict(cell, cycle, std::nullopt);
            if (p.soc.size() != cycle.n_samples())
                fail(ErrorKind::Shape, "evaluate: predictor returned " + std::to_string(p.soc.size()) +
                                           " SOC values for " + std::to_string(cycle.n_samples()) + " segments");
            const double n_par = static_cast<double>(cell.n_parallel);
            const double q3 = options.fixed_q3_ah ? *options.fixed_q3_ah : cell.q3_ah;
            CycleResult& r = results[static_cast<std::size_t>(i)];
            r.cell = cell.label;
            r.cycle = cycle.cycle_index;
            r.temperature_c = cell.temperature_c;
            r.n_parallel = cell.n_parallel;
            r.q_true = n_par * cycle.q_target_ah;
            r.q_pred = n_par * p.q_ah;
            r.soh_true = cycle.soh_target;
            r.soh_pred = p.soh;
            r.soh_cali = soh_cali(r.q_pred, n_par * q3);
            r.soc_true = cycle.soc_targets;
            r.soc_pred = p.soc;
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    report.split = options.split_name;
    Pool all;
    std::map<double, Pool> by_temp;
    std::map<double, std::size_t> temp_cycles;
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < results.size(); ++i) {
        all.add(results[i]);
        by_temp[results[i].temperature_c].add(results[i]);
        ++temp_cycles[results[i].temperature_c];
        cells.push_back(refs[i].cell);
        report.segments += results[i].soc_pred.size();
    }
    std::sort(cells.begin(), cells.end());
    report.cells = static_cast<std::size_t>(std::unique(cells.begin(), cells.end()) - cells.begin());
    report.cycles = results.size();
    all.fill(report.soc, report.q, report.soh_pred, report.soh_cali);
    for (const auto& [t, pool] : by_temp) {
        TemperatureMetrics tm;
        tm.temperature_c = t;
        tm.cycles = temp_cycles[t];
        tm.segments = pool.soc_p.size();
        pool.fill(tm.soc, tm.q, tm.soh_pred, tm.soh_cali);
        report.by_temperature.push_back(tm);
    }
    report.results = std::move(results);
    return report;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["split"] = report.split;
    j["cells"] = report.cells;
    j["cycles"] = report.cycles;
    j["segments"] = report.segments;
    j["soc"] = metrics_json(report.soc);
    j["q_ah"] = metrics_json(report.q);
    j["soh_pred"] = metrics_json(report.soh_pred);
    j["soh_cali"] = metrics_json(report.soh_cali);
    auto temps = nlohmann::ordered_json::array();
    for (const auto& t : report.by_temperature) {
        nlohmann::ordered_json e;
        e["temperature_c"] = t.temperature_c;
        e["cycles"] = t.cycles;
        e["segments"] = t.segments;
        e["soc"] = metrics_json(t.soc);
        e["q_ah"] = metrics_json(t.q);
        e["soh_pred"] = metrics_json(t.soh_pred);
        e["soh_cali"] = metrics_json(t.soh_cali);
        temps.push_back(std::move(e));
    }
    j["by_temperature"] = std::move(temps);
    return j.dump(2) + "\n";
}

std::string predictions_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "cell,cycle,q_true,q_pred,soh_true,soh_pred,soh_cali\n";
    for (const auto& r : report.results)
        out << r.cell << ',' << r.cycle << ',' << format_double(r.q_true) << ',' << format_double(r.q_pred) << ','
            << format_double(r.soh_true) << ',' << format_double(r.soh_pred) << ',' << format_double(r.soh_cali)
            << '\n';
    return out.str();
}

std::string soc_parity_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "cell,cycle,position,soc_true,soc_pred\n";
    for (const auto& r : report.results)
        for (std::size_t s = 0; s < r.soc_pred.size(); ++s)
            out << r.cell << ',' << r.cycle << ',' << s + 1 << ',' << format_double(r.soc_true[s]) << ','
                << format_double(r.soc_pred[s]) << '\n';
    return out.str();
}

std::string soh_trace_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "cell,temperature_c,cycle,soh_true,soh_pred,soh_cali\n";
    for (const auto& r : report.results)
        out << r.cell << ',' << format_double(r.temperature_c) << ',' << r.cycle << ',' << format_double(r.soh_true)
            << ',' << format_double(r.soh_pred) << ',' << format_double(r.soh_cali) << '\n';
    return out.str();
}

PackPrediction pack_predict(const FullModel& model, const RawCycle& unit_cycle, int n_parallel, double temperature_c,
                            const std::optional<std::vector<std::size_t>>& subset, double period_s) {
    if (n_parallel < 1)
        fail(ErrorKind::Config, "pack_predict: n_parallel must be >= 1, got " + std::to_string(n_parallel));
    const ResampledCycle cell = resample_features(per_cell_cycle(unit_cycle, n_parallel), period_s);
    const CycleWindows windows(cell, WindowConfig{model.config().window_size, period_s});
    CyclePrediction p = predict_windows(model, windows, subset, temperature_c);
    PackPrediction out;
    out.positions = std::move(p.positions);
    out.soc = std::move(p.soc);
    out.soh = p.soh;
    out.cell_q_ah = p.q_ah;
    out.pack_q_ah = static_cast<double>(n_parallel) * p.q_ah;
    return out;
}

}  // namespace sohnet
