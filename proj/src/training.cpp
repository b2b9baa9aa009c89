#include "sohnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sohnet/checkpoint.hpp"
#include "sohnet/error.hpp"
#include "sohnet/metrics.hpp"
#include "sohnet/optim.hpp"
#include "sohnet/textio.hpp"

namespace sohnet {

void LossConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::Config, "gamma must lie in [0, 1], got " + format_double(gamma));
}

ad::Var combined_loss(ad::Var soc_pred, ad::Var soc_target, ad::Var soh_pred, ad::Var soh_target, ad::Var q_pred,
                      ad::Var q_target, const LossConfig& config) {
    config.validate();
    if (soc_pred.value().empty() || soh_pred.value().empty())
        fail(ErrorKind::Loss, "combined_loss: empty batch");
    const ad::Var terms[] = {ad::mse(soc_pred, soc_target), ad::mse(soh_pred, soh_target), ad::mse(q_pred, q_target)};
    const double half = (1.0 - config.gamma) / 2.0;
    const double coeffs[] = {config.gamma, half, half};
    return ad::lincomb(terms, coeffs);
}

double combined_loss_value(std::span<const double> soc_pred, std::span<const double> soc_target,
                           std::span<const double> soh_pred, std::span<const double> soh_target,
                           std::span<const double> q_pred, std::span<const double> q_target,
                           const LossConfig& config) {
    config.validate();
    if (soc_pred.empty() || soh_pred.empty()) fail(ErrorKind::Loss, "combined_loss: empty batch");
    if (q_pred.size() != soh_pred.size())
        fail(ErrorKind::Loss, "combined_loss: SOH and Q terms must cover the same cycles");
    const double half = (1.0 - config.gamma) / 2.0;
    double loss = config.gamma * mean_squared_error(soc_pred, soc_target);
    loss += half * mean_squared_error(soh_pred, soh_target);
    loss += half * mean_squared_error(q_pred, q_target);
    return loss;
}

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) fail(ErrorKind::Config, std::string(name) + " must be positive");
    };
    positive(lr0, "lr0");
    if (!(weight_decay >= 0.0)) fail(ErrorKind::Config, "weight_decay must be non-negative");
    positive(static_cast<double>(batch_cycles), "batch_cycles");
    positive(static_cast<double>(epochs), "epochs");
    positive(static_cast<double>(sched_step_epochs), "sched_step_epochs");
    positive(sched_factor, "sched_factor");
    positive(static_cast<double>(max_segments_per_cycle_train), "max_segments_per_cycle_train");
    positive(static_cast<double>(valid_stride), "valid_stride");
    if (!(keep_fraction_min > 0.0 && keep_fraction_min <= keep_fraction_max && keep_fraction_max <= 1.0))
        fail(ErrorKind::Config, "segment keep fraction range must satisfy 0 < min <= max <= 1");
}

double TrainConfig::lr_for_epoch(std::size_t epoch) const {
    const std::size_t decays = (epoch - 1) / sched_step_epochs;
    return lr0 * std::pow(sched_factor, static_cast<double>(decays));
}

std::string train_config_to_json(const TrainConfig& t, const LossConfig& loss) {
    nlohmann::ordered_json j;
    j["gamma"] = loss.gamma;
    j["lr0"] = t.lr0;
    j["weight_decay"] = t.weight_decay;
    j["batch_cycles"] = t.batch_cycles;
    j["epochs"] = t.epochs;
    j["sched_step_epochs"] = t.sched_step_epochs;
    j["sched_factor"] = t.sched_factor;
    j["max_segments_per_cycle_train"] = t.max_segments_per_cycle_train;
    j["keep_fraction_min"] = t.keep_fraction_min;
    j["keep_fraction_max"] = t.keep_fraction_max;
    j["seed"] = t.seed;
    j["valid_stride"] = t.valid_stride;
    j["holdout_temperatures"] = t.holdout_temperatures;
    return j.dump();
}

void apply_train_json(const std::string& json_text, TrainConfig& t, LossConfig& loss) {
    try {
        const auto j = nlohmann::json::parse(json_text, nullptr, true, true);
        loss.gamma = j.value("gamma", loss.gamma);
        t.lr0 = j.value("lr0", t.lr0);
        t.weight_decay = j.value("weight_decay", t.weight_decay);
        t.batch_cycles = j.value("batch_cycles", t.batch_cycles);
        t.epochs = j.value("epochs", t.epochs);
        t.sched_step_epochs = j.value("sched_step_epochs", t.sched_step_epochs);
        t.sched_factor = j.value("sched_factor", t.sched_factor);
        t.max_segments_per_cycle_train = j.value("max_segments_per_cycle_train", t.max_segments_per_cycle_train);
        t.keep_fraction_min = j.value("keep_fraction_min", t.keep_fraction_min);
        t.keep_fraction_max = j.value("keep_fraction_max", t.keep_fraction_max);
        t.seed = j.value("seed", t.seed);
        t.valid_stride = j.value("valid_stride", t.valid_stride);
        t.holdout_temperatures = j.value("holdout_temperatures", t.holdout_temperatures);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("training config: ") + e.what());
    }
}

std::string checkpoint_config(const ModelConfig& model, const TrainConfig& train, const LossConfig& loss,
                              std::size_t epoch) {
    nlohmann::ordered_json j;
    j["kind"] = "sohnet";
    j["model"] = nlohmann::ordered_json::parse(model.to_json());
    j["train"] = nlohmann::ordered_json::parse(train_config_to_json(train, loss));
    j["epoch"] = epoch;
    return j.dump();
}

ModelConfig model_config_from_checkpoint(const std::string& config_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(config_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Version, std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    if (!j.contains("model")) fail(ErrorKind::Version, "checkpoint config has no model section");
    return ModelConfig::from_json(j["model"].dump());
}

std::string trace_csv(const TrainState& state, std::uint64_t seed, const std::string& config_text) {
    std::ostringstream out;
    out << provenance_header(seed, config_text);
    out << "epoch,train_loss,valid_r2_q,valid_r2_soh,valid_r2_avg,lr\n";
    for (const auto& r : state.trace)
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.valid_r2_q) << ','
            << format_double(r.valid_r2_soh) << ',' << format_double(r.valid_r2_avg) << ',' << format_double(r.lr)
            << '\n';
    return out.str();
}

ValidationScore validation_score(const FullModel& model, const Dataset& data, std::span<const CycleRef> refs,
                                 std::size_t stride) {
    if (refs.empty()) fail(ErrorKind::Split, "validation split is empty");
    if (stride == 0) fail(ErrorKind::Config, "valid_stride must be positive");
    const std::size_t w = model.config().window_size;
    std::vector<double> q_pred(refs.size()), q_true(refs.size()), soh_pred(refs.size()), soh_true(refs.size());
    std::vector<std::exception_ptr> errors(refs.size());
    const auto n = static_cast<std::int64_t>(refs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            const auto& cell = data.cells[refs[k].cell];
            const auto& cycle = cell.cycles[refs[k].cycle];
            const CycleWindows windows(cycle, WindowConfig{w, cycle.grid_period_s});
            SohQ out;
            if (stride == 1) {
                const auto p = predict_windows(model, windows, std::nullopt, cell.temperature_c, 64);
                out = {p.soh, p.q_ah};
            } else {
                std::vector<Segment> segs;
                for (std::size_t pos = 1; pos <= windows.size(); pos += stride) segs.push_back(windows.segment(pos));
                const auto p = predict_cycle(model, segs, std::nullopt, cell.temperature_c);
                out = {p.soh, p.q_ah};
            }
            q_pred[k] = out.q_ah;
            soh_pred[k] = out.soh;
            q_true[k] = cycle.q_target_ah;
            soh_true[k] = cycle.soh_target;
        } catch (...) {
            errors[k] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    ValidationScore s;
    s.r2_q = r2(q_pred, q_true);
    s.r2_soh = r2(soh_pred, soh_true);
    s.r2_avg = r2_avg(s.r2_q, s.r2_soh);
    return s;
}

ad::Var batch_loss(const FullModel& model, const FullModel::Bound& b, std::span<const BatchItem> batch,
                   const LossConfig& loss_cfg) {
    if (batch.empty()) fail(ErrorKind::Loss, "batch_loss: empty batch");
    ad::Tape& tape = *b.all.front().tape;
    const auto& cfg = model.config();
    const std::size_t w = cfg.window_size;
    std::size_t total = 0;
    for (const auto& bc : batch) total += bc.positions.size();

    Tensor features({total, 2, w});
    std::vector<double> soc_t, soh_t, q_t, temps;
    std::vector<std::vector<std::size_t>> groups;
    std::size_t row = 0;
    for (const auto& bc : batch) {
        const CycleWindows windows(*bc.cycle, WindowConfig{w, bc.cycle->grid_period_s});
        const std::size_t first = row;
        for (std::size_t pos : bc.positions) {
            windows.write_feature(pos, features.data().subspan(row * 2 * w, 2 * w));
            soc_t.push_back(bc.cycle->soc_targets[pos - 1]);
            ++row;
        }
        std::vector<std::size_t> g;
        for (std::size_t k : bc.keep) {
            if (k >= bc.positions.size()) fail(ErrorKind::Index, "batch_loss: kept index outside the sampled segments");
            g.push_back(first + k);
        }
        groups.push_back(std::move(g));
        soh_t.push_back(bc.cycle->soh_target);
        q_t.push_back(bc.cycle->q_target_ah / cfg.q_nominal_ah);
        temps.push_back(bc.cell->temperature_c);
    }

    const ad::Var pooled = model.encode(b, tape.constant(std::move(features)));
    const ad::Var soc = model.soc_head(b, pooled);
    const ad::Var agg = ad::group_mean(pooled, groups);
    const ad::Var out = model.soh_q_head(b, agg, model.temperature_features(b, temps));
    const std::size_t m = batch.size();
    return combined_loss(soc, tape.constant(Tensor({total}, soc_t)), ad::select_col(out, 0),
                         tape.constant(Tensor({m}, soh_t)), ad::select_col(out, 1), tape.constant(Tensor({m}, q_t)),
                         loss_cfg);
}

namespace {

std::vector<std::size_t> sample_sorted(std::size_t n, std::size_t m, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (m < n) {
        for (std::size_t i = 0; i < m; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(all[i], all[pick(rng)]);
        }
        all.resize(m);
        std::sort(all.begin(), all.end());
    }
    return all;
}

double step_batch(FullModel& model, const std::vector<BatchItem>& batch, const LossConfig& loss_cfg,
                  const AdamConfig& adam) {
    ad::Tape tape;
    const auto b = model.bind(tape);
    const ad::Var loss = batch_loss(model, b, batch, loss_cfg);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) return value;
    tape.backward(loss);
    model.params().zero_grad();
    model.params().accumulate_grads(tape, b.all);
    adam_step(model.params(), adam);
    return value;
}

}  // namespace

TrainResult train(const Dataset& data, const ModelConfig& model_config, const LossConfig& loss,
                  const TrainConfig& config, const TrainOutputs& outputs) {
    loss.validate();
    config.validate();
    model_config.validate();

    CycleFilter filter;
    filter.single_cells_only = true;
    filter.exclude_temperatures = config.holdout_temperatures;
    filter.split = Split::Train;
    const auto train_refs = select_cycles(data, filter);
    filter.split = Split::Valid;
    const auto valid_refs = select_cycles(data, filter);
    if (train_refs.empty()) fail(ErrorKind::Split, "train: no training cycles");
    if (valid_refs.empty()) fail(ErrorKind::Split, "train: no validation cycles");

    FullModel model(model_config, config.seed);
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> keep_dist(config.keep_fraction_min, config.keep_fraction_max);
    TrainState state;
    std::optional<FullModel> best;
    const std::string run_config = checkpoint_config(model_config, config, loss, 0);
    if (outputs.dir) std::filesystem::create_directories(*outputs.dir);

    std::vector<CycleRef> order = train_refs;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = config.lr_for_epoch(epoch);
        const AdamConfig adam{lr, 0.9, 0.999, 1e-8, config.weight_decay};
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_cycles) {
            const std::size_t end = std::min(order.size(), start + config.batch_cycles);
            std::vector<BatchItem> batch;
            for (std::size_t i = start; i < end; ++i) {
                BatchItem bc;
                bc.cell = &data.cells[order[i].cell];
                bc.cycle = &bc.cell->cycles[order[i].cycle];
                const std::size_t n = bc.cycle->n_samples();
                const std::size_t m = std::min(n, config.max_segments_per_cycle_train);
                const auto picked = sample_sorted(n, m, rng);
                for (std::size_t p : picked) bc.positions.push_back(p + 1);
                const double f = keep_dist(rng);
                const auto n_keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(m))));
                bc.keep = sample_sorted(m, std::min(n_keep, m), rng);
                batch.push_back(std::move(bc));
            }
            const double value = step_batch(model, batch, loss, adam);
            if (!std::isfinite(value))
                fail(ErrorKind::Loss, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(n_batches + 1) + " (lr " + format_double(lr) + ")");
            loss_sum += value;
            ++n_batches;
        }

        const ValidationScore score = validation_score(model, data, valid_refs, config.valid_stride);
        TraceRow row{epoch, loss_sum / static_cast<double>(n_batches), score.r2_q, score.r2_soh, score.r2_avg, lr};
        state.trace.push_back(row);
        state.epoch = epoch;
        if (score.r2_avg > state.best_r2_avg) {
            state.best_r2_avg = score.r2_avg;
            state.best_epoch = epoch;
            best.emplace(model);
            if (outputs.dir)
                write_checkpoint(*outputs.dir / "best.ckpt", checkpoint_config(model_config, config, loss, epoch),
                                 model.params());
        }
        if (outputs.dir) write_text_file(*outputs.dir / "trace.csv", trace_csv(state, config.seed, run_config));
        if (outputs.on_epoch) outputs.on_epoch(row);
    }
    if (outputs.dir)
        write_checkpoint(*outputs.dir / "last.ckpt", checkpoint_config(model_config, config, loss, config.epochs),
                         model.params());
    if (!best) best.emplace(model);
    return TrainResult{state, std::move(*best), std::move(model)};
}

}  // namespace sohnet
