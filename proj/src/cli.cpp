#include "sohnet/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sohnet/checkpoint.hpp"
#include "sohnet/dataset.hpp"
#include "sohnet/metrics.hpp"
#include "sohnet/synthgen.hpp"
#include "sohnet/textio.hpp"
#include "sohnet/training.hpp"

namespace fs = std::filesystem;

namespace sohnet::cli {

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
            return kExitUsage;
        case ErrorKind::Numeric:
        case ErrorKind::Divergence:
        case ErrorKind::Loss:
            return kExitNumeric;
        default:
            return kExitData;
    }
}

namespace {

using Json = nlohmann::ordered_json;

template <class T>
struct Flag {
    T value{};
    CLI::Option* opt = nullptr;
    bool given() const { return opt != nullptr && opt->count() > 0; }
};

template <class T>
void add_flag(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
    if constexpr (std::is_same_v<T, bool>)
        f.opt = app->add_flag(name, f.value, help);
    else
        f.opt = app->add_option(name, f.value, help);
}

// Resolves each setting as flag > environment > config file > default and
// echoes the winner with its source.
class Settings {
public:
    Settings(std::string command, std::ostream& log) : command_(std::move(command)), log_(log) {}

    void load(const Flag<std::string>& config_flag) {
        if (!config_flag.given()) return;
        const std::string text = read_text_file(config_flag.value);
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(text, nullptr, true, true);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Config, "config file " + config_flag.value + ": " + e.what());
        }
        if (!parsed.is_object()) fail(ErrorKind::Config, "config file " + config_flag.value + " must hold a JSON object");
        config_ = std::move(parsed);
        log_ << "[" << command_ << "] config file " << config_flag.value << '\n';
    }

    template <class T>
    T get(const std::string& key, const Flag<T>& flag, T fallback, const char* env = nullptr) {
        auto v = lookup(key, flag, env);
        if (!v) {
            note(key, fallback, "default");
            return fallback;
        }
        return *v;
    }

    template <class T>
    std::optional<T> get_optional(const std::string& key, const Flag<T>& flag) {
        auto v = lookup(key, flag, nullptr);
        if (!v) log_ << "[" << command_ << "] " << key << " = (unset)\n";
        return v;
    }

    template <class T>
    T require(const std::string& key, const Flag<T>& flag) {
        auto v = get_optional(key, flag);
        if (!v) fail(ErrorKind::Config, command_ + ": --" + dashed(key) + " is required");
        return *v;
    }

    /// Config keys that no setting consumed are almost always typos.
    void finish() const {
        for (auto it = config_.begin(); it != config_.end(); ++it)
            if (!used_.contains(it.key()))
                fail(ErrorKind::Config, command_ + ": unknown config key '" + it.key() + "'");
    }

    std::string digest_text() const { return resolved_.dump(); }

private:
    static std::string dashed(std::string key) {
        std::replace(key.begin(), key.end(), '_', '-');
        return key;
    }

    template <class T>
    std::optional<T> lookup(const std::string& key, const Flag<T>& flag, const char* env) {
        used_[key] = true;
        if (flag.given()) {
            note(key, flag.value, "flag");
            return flag.value;
        }
        if (env != nullptr) {
            if (const char* e = std::getenv(env); e != nullptr && *e != '\0') {
                T value = from_env<T>(env, e);
                note(key, value, std::string("env ") + env);
                return value;
            }
        }
        if (config_.contains(key)) {
            try {
                T value = config_[key].get<T>();
                note(key, value, "config");
                return value;
            } catch (const nlohmann::json::exception& e) {
                fail(ErrorKind::Config, command_ + ": config key '" + key + "': " + e.what());
            }
        }
        return std::nullopt;
    }

    template <class T>
    static T from_env(const char* name, const char* text) {
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else {
            try {
                return nlohmann::json::parse(text).get<T>();
            } catch (const nlohmann::json::exception&) {
                fail(ErrorKind::Config, std::string("environment variable ") + name + " has invalid value '" + text + "'");
            }
        }
    }

    template <class T>
    void note(const std::string& key, const T& value, const std::string& source) {
        resolved_[key] = value;
        log_ << "[" << command_ << "] " << key << " = " << Json(value).dump() << " (" << source << ")\n";
    }

    std::string command_;
    std::ostream& log_;
    nlohmann::json config_ = nlohmann::json::object();
    std::map<std::string, bool> used_;
    Json resolved_ = Json::object();
};

struct Common {
    Flag<std::string> config;
    Flag<std::uint64_t> seed;
    Flag<std::string> out;
    Flag<int> threads;

    void add(CLI::App* app) {
        add_flag(app, config, "--config", "JSON file of settings (flags take precedence)");
        add_flag(app, seed, "--seed", "random seed recorded in every output header");
        add_flag(app, out, "--out", "output directory (env SOHNET_OUT_DIR)");
        add_flag(app, threads, "--threads", "OpenMP thread count, 0 = runtime default (env SOHNET_THREADS)");
    }
};

struct Resolved {
    std::uint64_t seed = 42;
    fs::path out;
};

Resolved resolve_common(Settings& s, const Common& c, const std::string& default_out) {
    s.load(c.config);
    Resolved r;
    r.seed = s.get("seed", c.seed, std::uint64_t{42});
    r.out = s.get("out", c.out, default_out, "SOHNET_OUT_DIR");
    const int threads = s.get("threads", c.threads, 0, "SOHNET_THREADS");
    if (threads < 0) fail(ErrorKind::Config, "threads must be >= 0");
    if (threads > 0) omp_set_num_threads(threads);
    return r;
}

std::string csv_header(std::uint64_t seed, const std::string& config) { return provenance_header(seed, config); }

std::string json_header(std::uint64_t seed, const std::string& config) {
    return "//" + provenance_header(seed, config).substr(1);
}

void write_out(const fs::path& path, const std::string& text, std::ostream& log) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text_file(path, text);
    log << "wrote " << path.generic_string() << '\n';
}

// ---- dataset loading with an on-disk cache ----------------------------------

std::string cache_key(const fs::path& manifest_path, const Manifest& manifest) {
    std::string material = read_text_file(manifest_path);
    for (const auto& e : manifest.cells) {
        material += '\0' + read_text_file(e.profile_path);
        material += '\0' + read_text_file(e.capacity_path);
    }
    material += "|period=" + format_double(kGridPeriodS);
    return hex64(fnv1a64(material));
}

Dataset load_dataset(const fs::path& manifest_path, const std::optional<fs::path>& cache, std::ostream& log) {
    const Manifest manifest = read_manifest(manifest_path);
    if (!cache) return prepare_dataset(manifest);
    const std::string key = cache_key(manifest_path, manifest);
    fs::path key_path = *cache;
    key_path += ".key";
    if (fs::exists(*cache) && fs::exists(key_path) && read_text_file(key_path) == key + "\n") {
        log << "prepared cache hit: " << cache->generic_string() << '\n';
        return decode_dataset(read_text_file(*cache));
    }
    Dataset data = prepare_dataset(manifest);
    if (cache->has_parent_path()) fs::create_directories(cache->parent_path());
    write_text_file(*cache, encode_dataset(data));
    write_text_file(key_path, key + "\n");
    log << "prepared cache written: " << cache->generic_string() << '\n';
    return data;
}

// ---- checkpoints -------------------------------------------------------------

struct LoadedModel {
    std::string config;
    std::optional<FullModel> model;  // empty for the oracle checkpoint
    std::optional<std::uint64_t> seed;
};

LoadedModel load_model(const fs::path& path) {
    Checkpoint ckpt = read_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ckpt.config);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Version, "checkpoint config is not valid JSON: " + std::string(e.what()));
    }
    LoadedModel loaded;
    loaded.config = ckpt.config;
    const std::string kind = j.is_object() ? j.value("kind", std::string()) : std::string();
    if (kind == "oracle") return loaded;
    if (kind != "sohnet") fail(ErrorKind::Version, "unknown checkpoint kind '" + kind + "' in " + path.string());
    if (j.contains("train") && j["train"].contains("seed")) loaded.seed = j["train"]["seed"].get<std::uint64_t>();
    const ModelConfig config = model_config_from_checkpoint(ckpt.config);
    try {
        loaded.model.emplace(config, std::move(ckpt.params));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Shape) throw;
        fail(ErrorKind::Version, "checkpoint " + path.string() + " does not match its model config: " + e.what());
    }
    return loaded;
}

std::string with_provenance(const std::string& json_text, std::uint64_t seed, const std::string& config) {
    return json_header(seed, config) + json_text + "\n";
}

void print_metrics(std::ostream& out, const std::string& title, const EvalReport& r) {
    out << title << ": cells=" << r.cells << " cycles=" << r.cycles << " segments=" << r.segments << '\n'
        << "  R2(SOC)=" << format_double(r.soc.r2) << "  R2(Q)=" << format_double(r.q.r2)
        << "  MSE(Q)=" << format_double(r.q.mse) << "  MAE(Q)=" << format_double(r.q.mae) << '\n'
        << "  SOH_pred max err %=" << format_double(r.soh_pred.max_abs_err_pct)
        << "  SOH_cali max err %=" << format_double(r.soh_cali.max_abs_err_pct) << '\n';
}

void write_report_files(const fs::path& dir, const std::string& prefix, const EvalReport& report,
                        std::uint64_t seed, const std::string& config, std::ostream& log) {
    write_out(dir / (prefix + "report.json"), with_provenance(report_to_json(report), seed, config), log);
    write_out(dir / (prefix + "predictions.csv"), csv_header(seed, config) + predictions_csv(report), log);
    write_out(dir / (prefix + "soc_parity.csv"), csv_header(seed, config) + soc_parity_csv(report), log);
    write_out(dir / (prefix + "soh_trace.csv"), csv_header(seed, config) + soh_trace_csv(report), log);
}

// ---- subcommands --------------------------------------------------------------

struct SynthCmd {
    Common common;
    Flag<std::vector<double>> temperatures;
    Flag<int> cells_per_temperature;
    Flag<std::vector<double>> unseen_temperatures;
    Flag<int> unseen_cells;
    Flag<int> n_cycles;
    Flag<int> n_parallel;
    Flag<double> pack_temperature;
    Flag<double> noise_v, noise_a, fade_jitter, fade_rate, sample_period, jitter;
    Flag<int> regime_cycle;
    Flag<double> regime_jump;

    void add(CLI::App* app) {
        common.add(app);
        add_flag(app, temperatures, "--temperatures", "training temperatures in °C");
        add_flag(app, cells_per_temperature, "--cells-per-temperature", "cells per temperature");
        add_flag(app, unseen_temperatures, "--unseen-temperatures", "extra temperatures for transfer tests");
        add_flag(app, unseen_cells, "--unseen-cells", "cells per unseen temperature");
        add_flag(app, n_cycles, "--cycles", "cycles per cell");
        add_flag(app, n_parallel, "--n-parallel", "add one parallel pack of this many cells (> 1)");
        add_flag(app, pack_temperature, "--pack-temperature", "pack temperature in °C");
        add_flag(app, noise_v, "--noise-v", "voltage noise sd [V]");
        add_flag(app, noise_a, "--noise-a", "current noise sd [A]");
        add_flag(app, fade_jitter, "--fade-jitter", "relative per-cell fade-rate jitter");
        add_flag(app, fade_rate, "--fade-rate", "fixed fade rate for every cell");
        add_flag(app, sample_period, "--sample-period", "nominal sampling period [s]");
        add_flag(app, jitter, "--jitter", "sampling-time jitter [s]");
        add_flag(app, regime_cycle, "--regime-cycle", "cycle of an optional SOH step change");
        add_flag(app, regime_jump, "--regime-jump", "size of the SOH step change");
    }

    int run(std::ostream& out, std::ostream& log) const {
        Settings s("synth", log);
        const Resolved r = resolve_common(s, common, "synth");
        SynthDatasetConfig c;
        c.seed = r.seed;
        c.temperatures = s.get("temperatures", temperatures, c.temperatures);
        c.cells_per_temperature = s.get("cells_per_temperature", cells_per_temperature, c.cells_per_temperature);
        c.unseen_temperatures = s.get("unseen_temperatures", unseen_temperatures, c.unseen_temperatures);
        c.unseen_cells = s.get("unseen_cells", unseen_cells, c.unseen_cells);
        c.n_cycles = s.get("cycles", n_cycles, c.n_cycles);
        c.pack_n_parallel = s.get("n_parallel", n_parallel, c.pack_n_parallel);
        c.pack_temperature_c = s.get("pack_temperature", pack_temperature, c.pack_temperature_c);
        auto& p = c.params;
        p.noise_v = s.get("noise_v", noise_v, p.noise_v);
        p.noise_a = s.get("noise_a", noise_a, p.noise_a);
        p.fade_jitter = s.get("fade_jitter", fade_jitter, p.fade_jitter);
        p.fade_rate = s.get_optional("fade_rate", fade_rate);
        p.sample_period_s = s.get("sample_period", sample_period, p.sample_period_s);
        p.jitter_s = s.get("jitter", jitter, p.jitter_s);
        p.regime_cycle = s.get_optional("regime_cycle", regime_cycle);
        p.regime_jump = s.get("regime_jump", regime_jump, p.regime_jump);
        s.finish();

        const Manifest m = gen_dataset(c, r.out);
        // Re-emit the manifest with a provenance comment (the reader skips comments).
        Manifest relative = m;
        for (auto& e : relative.cells) {
            e.profile_path = e.profile_path.filename();
            e.capacity_path = e.capacity_path.filename();
        }
        write_text_file(r.out / "manifest.json",
                        json_header(c.seed, s.digest_text()) + manifest_to_json(relative) + "\n");
        out << "generated " << m.cells.size() << " cells in " << r.out.generic_string() << '\n'
            << "manifest: " << (r.out / "manifest.json").generic_string() << '\n';
        return kExitOk;
    }
};

struct DataFlags {
    Flag<std::string> manifest;
    Flag<std::string> cache;

    void add(CLI::App* app) {
        add_flag(app, manifest, "--manifest", "dataset manifest (JSON)");
        add_flag(app, cache, "--cache", "prepared-dataset cache file, reused when inputs are unchanged");
    }

    Dataset load(Settings& s, std::ostream& log) const {
        const fs::path manifest_path = s.require("manifest", manifest);
        const auto cache_path = s.get_optional("cache", cache);
        std::optional<fs::path> c;
        if (cache_path) c = *cache_path;
        return load_dataset(manifest_path, c, log);
    }
};

struct PrepareCmd {
    Common common;
    DataFlags data;

    void add(CLI::App* app) {
        common.add(app);
        data.add(app);
    }

    int run(std::ostream& out, std::ostream& log) const {
        Settings s("prepare", log);
        const Resolved r = resolve_common(s, common, ".");
        const fs::path manifest_path = s.require("manifest", data.manifest);
        const std::string cache_path = s.get("cache", data.cache, (r.out / "prepared.bin").string());
        s.finish();
        const Dataset d = load_dataset(manifest_path, fs::path(cache_path), log);
        out << dataset_summary(d);
        return kExitOk;
    }
};

struct TrainCmd {
    Common common;
    DataFlags data;
    Flag<std::size_t> window_size, node_hidden, node_steps, soc_hidden, head_hidden;
    Flag<std::vector<std::size_t>> encoder_channels;
    Flag<double> q_nominal;
    Flag<double> gamma, lr, weight_decay, sched_factor, keep_min, keep_max;
    Flag<std::size_t> batch_cycles, epochs, sched_step, max_segments, valid_stride;
    Flag<std::vector<double>> holdout;

    void add(CLI::App* app) {
        common.add(app);
        data.add(app);
        add_flag(app, window_size, "--window-size", "segment length in grid samples");
        add_flag(app, encoder_channels, "--encoder-channels", "Conv2D output channels per layer");
        add_flag(app, node_hidden, "--node-hidden", "hidden channels of the ODE dynamics");
        add_flag(app, node_steps, "--node-steps", "RK4 steps over [0, 1]");
        add_flag(app, soc_hidden, "--soc-hidden", "SOC head hidden width");
        add_flag(app, head_hidden, "--head-hidden", "SOH/Q head hidden width");
        add_flag(app, q_nominal, "--q-nominal", "nominal capacity used to normalize Q [Ah]");
        add_flag(app, gamma, "--gamma", "SOC weight in the combined loss");
        add_flag(app, lr, "--lr", "initial learning rate");
        add_flag(app, weight_decay, "--weight-decay", "Adam L2 weight decay");
        add_flag(app, batch_cycles, "--batch-cycles", "cycles per mini-batch");
        add_flag(app, epochs, "--epochs", "training epochs");
        add_flag(app, sched_step, "--sched-step", "epochs between learning-rate decays");
        add_flag(app, sched_factor, "--sched-factor", "learning-rate decay factor");
        add_flag(app, max_segments, "--max-segments", "segments sampled per training cycle");
        add_flag(app, keep_min, "--keep-min", "lower bound of the kept-segment fraction");
        add_flag(app, keep_max, "--keep-max", "upper bound of the kept-segment fraction");
        add_flag(app, valid_stride, "--valid-stride", "validation uses every n-th segment");
        add_flag(app, holdout, "--holdout-temperatures", "temperatures withheld from training");
    }

    int run(std::ostream& out, std::ostream& log) const {
        Settings s("train", log);
        const Resolved r = resolve_common(s, common, "run");
        const ModelConfig md;
        Json mj;
        mj["window_size"] = s.get("window_size", window_size, md.window_size);
        mj["encoder_channels"] = s.get("encoder_channels", encoder_channels, md.encoder_channels);
        mj["node_hidden"] = s.get("node_hidden", node_hidden, md.node_hidden);
        mj["node_steps"] = s.get("node_steps", node_steps, md.node.n_steps);
        mj["soc_hidden"] = s.get("soc_hidden", soc_hidden, md.soc_hidden);
        mj["head_hidden"] = s.get("head_hidden", head_hidden, md.head_hidden);
        mj["q_nominal_ah"] = s.get("q_nominal", q_nominal, md.q_nominal_ah);
        const ModelConfig model_config = ModelConfig::from_json(mj.dump());

        LossConfig loss;
        loss.gamma = s.get("gamma", gamma, loss.gamma);
        TrainConfig t;
        t.seed = r.seed;
        t.lr0 = s.get("lr", lr, t.lr0);
        t.weight_decay = s.get("weight_decay", weight_decay, t.weight_decay);
        t.batch_cycles = s.get("batch_cycles", batch_cycles, t.batch_cycles);
        t.epochs = s.get("epochs", epochs, t.epochs);
        t.sched_step_epochs = s.get("sched_step", sched_step, t.sched_step_epochs);
        t.sched_factor = s.get("sched_factor", sched_factor, t.sched_factor);
        t.max_segments_per_cycle_train = s.get("max_segments", max_segments, t.max_segments_per_cycle_train);
        t.keep_fraction_min = s.get("keep_min", keep_min, t.keep_fraction_min);
        t.keep_fraction_max = s.get("keep_max", keep_max, t.keep_fraction_max);
        t.valid_stride = s.get("valid_stride", valid_stride, t.valid_stride);
        t.holdout_temperatures = s.get("holdout_temperatures", holdout, t.holdout_temperatures);
        const Dataset d = data.load(s, log);
        s.finish();
        loss.validate();
        t.validate();

        TrainOutputs outputs;
        outputs.dir = r.out;
        outputs.on_epoch = [&log](const TraceRow& row) {
            log << "epoch " << row.epoch << "  loss " << format_double(row.train_loss) << "  valid R2(Q) "
                << format_double(row.valid_r2_q) << "  R2(SOH) " << format_double(row.valid_r2_soh) << "  R2avg "
                << format_double(row.valid_r2_avg) << "  lr " << format_double(row.lr) << '\n';
        };
        const TrainResult result = train(d, model_config, loss, t, outputs);

        CycleFilter filter;
        filter.split = Split::Valid;
        filter.single_cells_only = true;
        filter.exclude_temperatures = t.holdout_temperatures;
        const auto refs = select_cycles(d, filter);
        EvalOptions options;
        options.split_name = "valid";
        const EvalReport report = evaluate(ModelPredictor(result.best), d, refs, options);
        const std::string config = checkpoint_config(model_config, t, loss, result.state.best_epoch);
        write_out(r.out / "valid_report.json", with_provenance(report_to_json(report), t.seed, config), log);
        out << "best epoch " << result.state.best_epoch << " of " << result.state.epoch << ", valid R2avg "
            << format_double(result.state.best_r2_avg) << '\n';
        print_metrics(out, "validation (best checkpoint)", report);
        return kExitOk;
    }
};

struct EvaluateCmd {
    Common common;
    DataFlags data;
    Flag<std::string> checkpoint;
    Flag<std::string> split;
    Flag<std::vector<double>> holdout;
    Flag<std::string> holdout_split;
    Flag<double> fixed_q3;

    void add(CLI::App* app) {
        common.add(app);
        data.add(app);
        add_flag(app, checkpoint, "--checkpoint", "model checkpoint");
        add_flag(app, split, "--split", "train | valid | test | all");
        add_flag(app, holdout, "--temperature-holdout", "temperatures reported separately as unseen");
        add_flag(app, holdout_split, "--holdout-split", "split used for the unseen-temperature report");
        add_flag(app, fixed_q3, "--fixed-q3", "reference capacity for SOH_cali instead of each cell's own [Ah]");
    }

    int run(std::ostream& out, std::ostream& log) const {
        Settings s("evaluate", log);
        const Resolved r = resolve_common(s, common, "eval");
        const fs::path ckpt_path = s.require("checkpoint", checkpoint);
        const Split sp = parse_split(s.get("split", split, std::string("test")));
        const auto temps = s.get("temperature_holdout", holdout, std::vector<double>{});
        const Split hsp = parse_split(s.get("holdout_split", holdout_split, std::string("all")));
        EvalOptions options;
        options.fixed_q3_ah = s.get_optional("fixed_q3", fixed_q3);
        const Dataset d = data.load(s, log);
        s.finish();

        const LoadedModel loaded = load_model(ckpt_path);
        const std::uint64_t seed = loaded.seed.value_or(r.seed);
        const std::string config = s.digest_text() + loaded.config;
        std::optional<ModelPredictor> model_predictor;
        OraclePredictor oracle;
        if (loaded.model) model_predictor.emplace(*loaded.model);
        const CyclePredictor& predictor =
            model_predictor ? static_cast<const CyclePredictor&>(*model_predictor) : oracle;

        CycleFilter filter;
        filter.split = sp;
        filter.exclude_temperatures = temps;
        options.split_name = to_string(sp);
        const EvalReport report = evaluate(predictor, d, select_cycles(d, filter), options);
        write_report_files(r.out, "", report, seed, config, log);
        print_metrics(out, std::string("split ") + to_string(sp), report);

        if (!temps.empty()) {
            CycleFilter unseen;
            unseen.split = hsp;
            unseen.only_temperatures = temps;
            options.split_name = std::string("holdout-") + to_string(hsp);
            const EvalReport hr = evaluate(predictor, d, select_cycles(d, unseen), options);
            write_report_files(r.out, "holdout_", hr, seed, config, log);
            print_metrics(out, "unseen temperatures", hr);
        }
        return kExitOk;
    }
};

struct Subset {
    double lo = 0.0, hi = 1.0;
};

Subset parse_subset(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) fail(ErrorKind::Config, "--subset must look like a:b, got '" + text + "'");
    Subset sub;
    try {
        std::size_t used = 0;
        const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
        sub.lo = std::stod(a, &used);
        if (used != a.size()) throw std::invalid_argument(a);
        sub.hi = std::stod(b, &used);
        if (used != b.size()) throw std::invalid_argument(b);
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "--subset must look like a:b, got '" + text + "'");
    }
    if (!(sub.lo >= 0.0 && sub.lo < sub.hi && sub.hi <= 1.0))
        fail(ErrorKind::Config, "--subset bounds must satisfy 0 <= a < b <= 1");
    return sub;
}

/// Positions p (1-based) with lo·N < p ≤ hi·N.
std::vector<std::size_t> subset_positions(const Subset& sub, std::size_t n) {
    std::vector<std::size_t> positions;
    const double dn = static_cast<double>(n);
    for (std::size_t p = 1; p <= n; ++p) {
        const double dp = static_cast<double>(p);
        if (dp > sub.lo * dn && dp <= sub.hi * dn) positions.push_back(p);
    }
    return positions;
}

struct PredictCmd {
    bool pack_mode = false;
    Common common;
    Flag<std::string> checkpoint, profile, subset;
    Flag<double> temperature;
    Flag<bool> clamp_soc;
    Flag<int> n_parallel;

    void add(CLI::App* app) {
        common.add(app);
        add_flag(app, checkpoint, "--checkpoint", "model checkpoint");
        add_flag(app, profile, "--profile", "charging-profile CSV (cycle,time_s,voltage_v,current_a)");
        add_flag(app, temperature, "--temperature", "test temperature in °C");
        add_flag(app, subset, "--subset", "fraction range a:b of segments used for SOH/Q");
        add_flag(app, clamp_soc, "--clamp-soc", "clamp reported SOC to [0, 1]");
        add_flag(app, n_parallel, "--n-parallel", "cells in parallel behind the measured unit");
        if (pack_mode) n_parallel.opt->required();
    }

    int run(std::ostream& out, std::ostream& log) const {
        const std::string name = pack_mode ? "pack-eval" : "predict";
        Settings s(name, log);
        const Resolved r = resolve_common(s, common, name);
        const fs::path ckpt_path = s.require("checkpoint", checkpoint);
        const fs::path profile_path = s.require("profile", profile);
        const double t_c = s.require("temperature", temperature);
        const auto subset_text = s.get_optional("subset", subset);
        const bool clamp = s.get("clamp_soc", clamp_soc, false);
        const int n = s.get("n_parallel", n_parallel, 1);
        s.finish();
        if (n < 1) fail(ErrorKind::Config, "--n-parallel must be >= 1");
        std::optional<Subset> sub;
        if (subset_text) sub = parse_subset(*subset_text);

        const LoadedModel loaded = load_model(ckpt_path);
        if (!loaded.model) fail(ErrorKind::Version, "the oracle checkpoint needs prepared targets; use evaluate");
        const FullModel& model = *loaded.model;
        const TemperatureCode code = temperature_code(model.config(), t_c);
        if (code.out_of_range)
            fail(ErrorKind::Input, "temperature " + format_double(t_c) + " °C is outside the model's range");

        const auto cycles = parse_profile(read_text_file(profile_path));
        const std::uint64_t seed = loaded.seed.value_or(r.seed);
        const std::string config = s.digest_text() + loaded.config;
        std::string soc_csv = csv_header(seed, config) + "cycle,position,time_s,soc_pred\n";
        std::string cyc_csv = csv_header(seed, config) + "cycle,n_parallel,segments_used,soh_pred,cell_q_ah,q_pred_ah\n";
        for (const RawCycle& cycle : cycles) {
            std::optional<std::vector<std::size_t>> positions;
            std::size_t used = 0;
            if (sub) {
                const std::size_t n_grid = resample(cycle).times.size();
                positions = subset_positions(*sub, n_grid);
                if (positions->empty())
                    fail(ErrorKind::Aggregation, "cycle " + std::to_string(cycle.cycle_index) + ": subset " +
                                                     *subset_text + " selects no segments");
                used = positions->size();
            }
            PackPrediction p;
            try {
                p = pack_predict(model, cycle, n, t_c, positions);
            } catch (const Error& e) {
                if (std::string_view(e.what()).starts_with("cycle ")) throw;
                throw Error(e.kind(), "cycle " + std::to_string(cycle.cycle_index) + ": " + e.what());
            }
            if (!sub) used = p.positions.size();
            const std::string k = std::to_string(cycle.cycle_index);
            for (std::size_t i = 0; i < p.positions.size(); ++i) {
                const double soc = clamp ? std::clamp(p.soc[i], 0.0, 1.0) : p.soc[i];
                soc_csv += k + ',' + std::to_string(p.positions[i]) + ',' +
                           format_double(static_cast<double>(p.positions[i] - 1) * kGridPeriodS) + ',' +
                           format_double(soc) + '\n';
            }
            const std::string line = k + ',' + std::to_string(n) + ',' + std::to_string(used) + ',' +
                                     format_double(p.soh) + ',' + format_double(p.cell_q_ah) + ',' +
                                     format_double(p.pack_q_ah) + '\n';
            cyc_csv += line;
        }
        write_out(r.out / "soc.csv", soc_csv, log);
        write_out(r.out / "cycles.csv", cyc_csv, log);
        out << cyc_csv.substr(cyc_csv.find('\n') + 1);
        return kExitOk;
    }
};

struct TraceEntry {
    std::size_t epoch = 0;
    double r2_avg = 0.0;
};

std::vector<TraceEntry> read_trace(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::vector<TraceEntry> rows;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "epoch,train_loss,valid_r2_q,valid_r2_soh,valid_r2_avg,lr")
                fail(ErrorKind::Schema, path.string() + ": unexpected trace header");
            header = true;
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 6) fail(ErrorKind::Schema, path.string() + ": trace row needs 6 fields");
        try {
            rows.push_back({std::stoul(std::string(f[0])), std::stod(std::string(f[4]))});
        } catch (const std::exception&) {
            fail(ErrorKind::Parse, path.string() + ": bad trace row '" + line + "'");
        }
    }
    if (rows.empty()) fail(ErrorKind::Schema, path.string() + ": empty trace");
    return rows;
}

struct ReportCmd {
    Common common;
    Flag<std::string> run_dir;

    void add(CLI::App* app) {
        common.add(app);
        add_flag(app, run_dir, "--run", "training output directory");
    }

    int run(std::ostream& out, std::ostream& log) const {
        Settings s("report", log);
        resolve_common(s, common, ".");
        const fs::path dir = s.require("run", run_dir);
        s.finish();
        const auto rows = read_trace(dir / "trace.csv");
        const auto best = std::max_element(rows.begin(), rows.end(), [](const TraceEntry& a, const TraceEntry& b) {
            return a.r2_avg < b.r2_avg;  // first maximum wins, matching strict improvement
        });
        out << "epochs " << rows.size() << ", best valid R2avg " << format_double(best->r2_avg) << " at epoch "
            << best->epoch << '\n';
        if (fs::exists(dir / "best.ckpt")) {
            const auto j = nlohmann::json::parse(read_checkpoint(dir / "best.ckpt").config);
            const auto epoch = j.value("epoch", std::size_t{0});
            out << "best.ckpt epoch " << epoch << (epoch == best->epoch ? " (matches trace)" : " (MISMATCH)") << '\n';
            if (epoch != best->epoch)
                fail(ErrorKind::Schema, "best.ckpt was not taken at the trace's best epoch");
        }
        if (fs::exists(dir / "valid_report.json")) {
            const auto j = nlohmann::json::parse(read_text_file(dir / "valid_report.json"), nullptr, true, true);
            out << "validation: R2(SOC) " << j["soc"]["r2"].dump() << ", R2(Q) " << j["q_ah"]["r2"].dump()
                << ", SOH_cali max err % " << j["soh_cali"]["max_abs_err_pct"].dump() << '\n';
        }
        return kExitOk;
    }
};

int run_checked(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"sohnet: SOC / SOH / capacity estimation from partial charging profiles"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    SynthCmd synth;
    PrepareCmd prepare;
    TrainCmd train_cmd;
    EvaluateCmd evaluate_cmd;
    PredictCmd predict;
    PredictCmd pack;
    pack.pack_mode = true;
    ReportCmd report;
    auto* s_synth = app.add_subcommand("synth", "generate a synthetic CC-CV ageing dataset");
    auto* s_prepare = app.add_subcommand("prepare", "parse, resample and split a dataset; cache the result");
    auto* s_train = app.add_subcommand("train", "train a model; writes trace and checkpoints");
    auto* s_eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    auto* s_predict = app.add_subcommand("predict", "predict SOC, SOH and capacity from a profile CSV");
    auto* s_pack = app.add_subcommand("pack-eval", "predict for a parallel pack (predict with --n-parallel)");
    auto* s_report = app.add_subcommand("report", "summarize a training run");
    synth.add(s_synth);
    prepare.add(s_prepare);
    train_cmd.add(s_train);
    evaluate_cmd.add(s_eval);
    predict.add(s_predict);
    pack.add(s_pack);
    report.add(s_report);

    std::vector<std::string> rest(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (s_synth->parsed()) return synth.run(out, err);
    if (s_prepare->parsed()) return prepare.run(out, err);
    if (s_train->parsed()) return train_cmd.run(out, err);
    if (s_eval->parsed()) return evaluate_cmd.run(out, err);
    if (s_predict->parsed()) return predict.run(out, err);
    if (s_pack->parsed()) return pack.run(out, err);
    return report.run(out, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return run_checked(args, out, err);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace sohnet::cli
