#include "sohnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <json.hpp>

#include "sohnet/error.hpp"

namespace sohnet {

std::size_t ModelConfig::encoded_width() const {
    std::size_t w = window_size;
    for (std::size_t s = 0; s < encoder_channels.size(); ++s) {
        if (w + 2 * encoder_pad < encoder_kernel) return 0;
        w = (w + 2 * encoder_pad - encoder_kernel) / encoder_stride + 1;
    }
    return w;
}

std::vector<Shape> ModelConfig::shape_chain() const {
    const std::size_t c = feature_channels(), w = encoded_width();
    return {{2, window_size}, {1, 2, window_size}, {c, 2, w}, {c, 2, w}, {c, 2, 1}, {2 * c}};
}

void ModelConfig::validate() const {
    if (window_size < 2) fail(ErrorKind::Config, "model: window_size must be >= 2");
    if (encoder_channels.empty()) fail(ErrorKind::Config, "model: encoder needs at least one stage");
    for (std::size_t c : encoder_channels)
        if (c == 0) fail(ErrorKind::Config, "model: encoder channel counts must be positive");
    if (encoder_kernel == 0 || encoder_stride == 0)
        fail(ErrorKind::Config, "model: encoder kernel and stride must be positive");
    if (encoded_width() == 0)
        fail(ErrorKind::Shape, "model: encoder stack collapses window_size " + std::to_string(window_size) +
                                   " to an empty time axis");
    DynamicsNetConfig{feature_channels(), node_hidden, node_kernel}.validate();
    node.validate();
    if (soc_hidden == 0 || head_hidden == 0 || temp_embed_dim == 0 || temp_ffn_hidden == 0 ||
        temp_ffn_dim == 0)
        fail(ErrorKind::Config, "model: layer widths must be positive");
    if (temp_bins < 1) fail(ErrorKind::Config, "model: temp_bins must be >= 1");
    if (!(t_max_c > t_min_c)) fail(ErrorKind::Config, "model: t_max must exceed t_min");
    if (!(q_nominal_ah > 0.0)) fail(ErrorKind::Config, "model: q_nominal_ah must be positive");
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["window_size"] = window_size;
    j["encoder_channels"] = encoder_channels;
    j["encoder_kernel"] = encoder_kernel;
    j["encoder_stride"] = encoder_stride;
    j["encoder_pad"] = encoder_pad;
    j["node_hidden"] = node_hidden;
    j["node_kernel"] = node_kernel;
    j["node_steps"] = node.n_steps;
    j["node_t0"] = node.t0;
    j["node_t1"] = node.t1;
    j["soc_hidden"] = soc_hidden;
    j["head_hidden"] = head_hidden;
    j["temp_bins"] = temp_bins;
    j["temp_embed_dim"] = temp_embed_dim;
    j["temp_ffn_hidden"] = temp_ffn_hidden;
    j["temp_ffn_dim"] = temp_ffn_dim;
    j["t_min_c"] = t_min_c;
    j["t_max_c"] = t_max_c;
    j["q_nominal_ah"] = q_nominal_ah;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.window_size = j.value("window_size", c.window_size);
        c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
        c.encoder_kernel = j.value("encoder_kernel", c.encoder_kernel);
        c.encoder_stride = j.value("encoder_stride", c.encoder_stride);
        c.encoder_pad = j.value("encoder_pad", c.encoder_pad);
        c.node_hidden = j.value("node_hidden", c.node_hidden);
        c.node_kernel = j.value("node_kernel", c.node_kernel);
        c.node.n_steps = j.value("node_steps", c.node.n_steps);
        c.node.t0 = j.value("node_t0", c.node.t0);
        c.node.t1 = j.value("node_t1", c.node.t1);
        c.soc_hidden = j.value("soc_hidden", c.soc_hidden);
        c.head_hidden = j.value("head_hidden", c.head_hidden);
        c.temp_bins = j.value("temp_bins", c.temp_bins);
        c.temp_embed_dim = j.value("temp_embed_dim", c.temp_embed_dim);
        c.temp_ffn_hidden = j.value("temp_ffn_hidden", c.temp_ffn_hidden);
        c.temp_ffn_dim = j.value("temp_ffn_dim", c.temp_ffn_dim);
        c.t_min_c = j.value("t_min_c", c.t_min_c);
        c.t_max_c = j.value("t_max_c", c.t_max_c);
        c.q_nominal_ah = j.value("q_nominal_ah", c.q_nominal_ah);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

TemperatureCode temperature_code(const ModelConfig& config, double t_c) {
    if (!std::isfinite(t_c)) fail(ErrorKind::Numeric, "temperature must be finite");
    TemperatureCode code;
    code.normalized = (t_c - config.t_min_c) / (config.t_max_c - config.t_min_c);
    const double raw = std::floor(code.normalized * static_cast<double>(config.temp_bins));
    const double top = static_cast<double>(config.temp_bins - 1);
    code.bin = static_cast<std::size_t>(std::clamp(raw, 0.0, top));
    code.out_of_range = t_c < config.t_min_c - 5.0 || t_c > config.t_max_c + 5.0;
    return code;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data()) v = u(rng);
    return t;
}

double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }
double plain_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::string enc_name(std::size_t s, const char* what) {
    return "encoder." + std::to_string(s) + "." + what;
}

Shape per_sample(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

void expect(const Shape& got, const Shape& want, const char* stage) {
    if (got != want)
        fail(ErrorKind::Shape, std::string("shape contract violated after ") + stage + ": expected " +
                                   to_string(want) + ", got " + to_string(got));
}

}  // namespace

FullModel::FullModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    init(seed);
}

FullModel::FullModel(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    check_params();
}

void FullModel::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto& ch = config_.encoder_channels;
    const std::size_t k = config_.encoder_kernel;
    std::size_t c_in = 1;
    for (std::size_t s = 0; s < ch.size(); ++s) {
        params_.add(enc_name(s, "weight"), uniform_tensor({ch[s], c_in, 1, k}, he_bound(c_in * k), rng));
        params_.add(enc_name(s, "bias"), Tensor({ch[s]}));
        c_in = ch[s];
    }
    add_dynamics_params(params_, "node", {config_.feature_channels(), config_.node_hidden, config_.node_kernel},
                        rng);
    const std::size_t pooled = config_.pooled_dim();
    params_.add("soc.fc1.weight", uniform_tensor({config_.soc_hidden, pooled}, he_bound(pooled), rng));
    params_.add("soc.fc1.bias", Tensor({config_.soc_hidden}));
    params_.add("soc.fc2.weight", uniform_tensor({1, config_.soc_hidden}, plain_bound(config_.soc_hidden), rng));
    params_.add("soc.fc2.bias", Tensor({1}));
    params_.add("temp.embedding", uniform_tensor({config_.temp_bins, config_.temp_embed_dim}, 0.05, rng));
    params_.add("temp.ffn1.weight", uniform_tensor({config_.temp_ffn_hidden, 1}, std::sqrt(3.0), rng));
    params_.add("temp.ffn1.bias", Tensor({config_.temp_ffn_hidden}));
    params_.add("temp.ffn2.weight", uniform_tensor({config_.temp_ffn_dim, config_.temp_ffn_hidden},
                                                   plain_bound(config_.temp_ffn_hidden), rng));
    params_.add("temp.ffn2.bias", Tensor({config_.temp_ffn_dim}));
    const std::size_t head_in = pooled + config_.temperature_dim();
    params_.add("head.fc1.weight", uniform_tensor({config_.head_hidden, head_in}, he_bound(head_in), rng));
    params_.add("head.fc1.bias", Tensor({config_.head_hidden}));
    params_.add("head.fc2.weight", uniform_tensor({2, config_.head_hidden}, plain_bound(config_.head_hidden), rng));
    params_.add("head.fc2.bias", Tensor({2}));
}

void FullModel::check_params() const {
    // A freshly initialized model defines the expected names and shapes.
    ModelConfig probe_cfg = config_;
    ParamStore expected;
    {
        FullModel probe(probe_cfg, 0);
        expected = probe.params_;
    }
    if (expected.params().size() != params_.params().size())
        fail(ErrorKind::Shape, "model: expected " + std::to_string(expected.params().size()) +
                                   " parameter tensors, got " + std::to_string(params_.params().size()));
    for (const Param& want : expected.params()) {
        if (!params_.contains(want.name)) fail(ErrorKind::Shape, "model: missing parameter '" + want.name + "'");
        const Param& got = params_.at(want.name);
        if (got.value.shape() != want.value.shape())
            fail(ErrorKind::Shape, "model: parameter '" + want.name + "' has shape " +
                                       to_string(got.value.shape()) + ", expected " + to_string(want.value.shape()));
    }
}

FullModel::Bound FullModel::bind(ad::Tape& tape) const {
    Bound b;
    b.all = params_.bind(tape);
    auto get = [&](const std::string& name) { return b.all[params_.index_of(name)]; };
    for (std::size_t s = 0; s < config_.encoder_channels.size(); ++s) {
        b.enc_w.push_back(get(enc_name(s, "weight")));
        b.enc_b.push_back(get(enc_name(s, "bias")));
    }
    b.dynamics = DynamicsNet{get("node.conv1.weight"), get("node.conv1.bias"), get("node.conv2.weight"),
                             get("node.conv2.bias"),
                             {config_.feature_channels(), config_.node_hidden, config_.node_kernel}};
    b.soc_w1 = get("soc.fc1.weight");
    b.soc_b1 = get("soc.fc1.bias");
    b.soc_w2 = get("soc.fc2.weight");
    b.soc_b2 = get("soc.fc2.bias");
    b.temp_table = get("temp.embedding");
    b.ffn_w1 = get("temp.ffn1.weight");
    b.ffn_b1 = get("temp.ffn1.bias");
    b.ffn_w2 = get("temp.ffn2.weight");
    b.ffn_b2 = get("temp.ffn2.bias");
    b.head_w1 = get("head.fc1.weight");
    b.head_b1 = get("head.fc1.bias");
    b.head_w2 = get("head.fc2.weight");
    b.head_b2 = get("head.fc2.bias");
    return b;
}

ad::Var FullModel::encode(const Bound& b, ad::Var features, std::vector<Shape>* observed) const {
    const auto chain = config_.shape_chain();
    Shape fs = features.shape();
    if (fs.size() == 3) {
        expect(per_sample(fs), chain[0], "input");
        if (observed) observed->push_back(per_sample(fs));
        features = ad::reshape(features, {fs[0], 1, fs[1], fs[2]});
    } else if (fs.size() != 4) {
        fail(ErrorKind::Shape, "encode: features must be N×2×W or N×1×2×W, got " + to_string(fs));
    }
    const std::size_t n = features.shape()[0];
    expect(per_sample(features.shape()), chain[1], "adding the channel axis");
    if (observed) observed->push_back(per_sample(features.shape()));

    const ad::ConvOptions stage{1, config_.encoder_stride, 0, config_.encoder_pad};
    ad::Var x = features;
    for (std::size_t s = 0; s < b.enc_w.size(); ++s) x = ad::relu(ad::conv2d(x, b.enc_w[s], b.enc_b[s], stage));
    expect(per_sample(x.shape()), chain[2], "the convolution block");
    if (observed) observed->push_back(per_sample(x.shape()));

    const DynamicsNet& field = b.dynamics;
    x = integrate([&field](ad::Var v) { return field(v); }, x, config_.node);
    expect(per_sample(x.shape()), chain[3], "the NODE block");
    if (observed) observed->push_back(per_sample(x.shape()));

    x = ad::avg_pool_last(x);
    expect(per_sample(x.shape()), chain[4], "average pooling");
    if (observed) observed->push_back(per_sample(x.shape()));

    x = ad::reshape(x, {n, config_.pooled_dim()});
    expect(per_sample(x.shape()), chain[5], "flattening");
    if (observed) observed->push_back(per_sample(x.shape()));
    return x;
}

ad::Var FullModel::soc_head(const Bound& b, ad::Var pooled) const {
    const ad::Var hidden = ad::relu(ad::linear(pooled, b.soc_w1, b.soc_b1));
    const ad::Var out = ad::linear(hidden, b.soc_w2, b.soc_b2);
    return ad::reshape(out, {out.value().size()});
}

ad::Var FullModel::temperature_features(const Bound& b, std::span<const double> temperatures_c) const {
    std::vector<std::size_t> bins;
    Tensor normalized({temperatures_c.size(), 1});
    for (std::size_t i = 0; i < temperatures_c.size(); ++i) {
        const TemperatureCode code = temperature_code(config_, temperatures_c[i]);
        bins.push_back(code.bin);
        normalized[i] = code.normalized;
    }
    const ad::Var embedded = ad::embedding_rows(b.temp_table, bins);
    const ad::Var t = b.temp_table.tape->constant(std::move(normalized));
    const ad::Var hidden = ad::tanh(ad::linear(t, b.ffn_w1, b.ffn_b1));
    const ad::Var ffn = ad::linear(hidden, b.ffn_w2, b.ffn_b2);
    return ad::concat(embedded, ffn);
}

ad::Var FullModel::soh_q_head(const Bound& b, ad::Var aggregated, ad::Var temperature) const {
    if (aggregated.shape().size() != 2 || aggregated.shape()[1] != config_.pooled_dim())
        fail(ErrorKind::Shape, "soh/q head: aggregated features must be M×" +
                                   std::to_string(config_.pooled_dim()) + ", got " + to_string(aggregated.shape()));
    if (temperature.shape().size() != 2 || temperature.shape()[1] != config_.temperature_dim())
        fail(ErrorKind::Shape, "soh/q head: temperature code must be M×" +
                                   std::to_string(config_.temperature_dim()) + ", got " + to_string(temperature.shape()));
    const ad::Var joined = ad::concat(aggregated, temperature);
    const ad::Var hidden = ad::relu(ad::linear(joined, b.head_w1, b.head_b1));
    return ad::linear(hidden, b.head_w2, b.head_b2);
}

Tensor encode_segment(const FullModel& model, const Tensor& feature, std::vector<Shape>* observed) {
    const std::size_t w = model.config().window_size;
    if (feature.shape() != Shape{2, w})
        fail(ErrorKind::Shape, "encode_segment: feature must be 2x" + std::to_string(w) + ", got " +
                                   to_string(feature.shape()));
    ad::Tape tape(ad::Tape::Mode::Inference);
    const auto b = model.bind(tape);
    const ad::Var x = tape.constant(feature.reshaped({1, 2, w}));
    const ad::Var pooled = model.encode(b, x, observed);
    return pooled.value().reshaped({model.config().pooled_dim()});
}

double predict_soc(const FullModel& model, const Tensor& pooled) {
    const std::size_t d = model.config().pooled_dim();
    if (pooled.size() != d) fail(ErrorKind::Shape, "predict_soc: pooled feature must have length " + std::to_string(d));
    ad::Tape tape(ad::Tape::Mode::Inference);
    const auto b = model.bind(tape);
    return model.soc_head(b, tape.constant(pooled.reshaped({1, d}))).value()[0];
}

Tensor aggregate_cycle(std::span<const PooledFeature> features) {
    if (features.empty()) fail(ErrorKind::Aggregation, "aggregate_cycle: no segment features");
    std::vector<const PooledFeature*> order;
    for (const auto& f : features) order.push_back(&f);
    std::stable_sort(order.begin(), order.end(),
                     [](const PooledFeature* a, const PooledFeature* b) { return a->position < b->position; });
    const Shape shape = order.front()->pooled.shape();
    Tensor out(shape);
    for (const PooledFeature* f : order) {
        if (f->pooled.shape() != shape) fail(ErrorKind::Shape, "aggregate_cycle: feature lengths differ");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += f->pooled[i];
    }
    const double count = static_cast<double>(order.size());
    for (double& v : out.data()) v /= count;
    return out;
}

Tensor encode_temperature(const FullModel& model, double t_c) {
    ad::Tape tape(ad::Tape::Mode::Inference);
    const auto b = model.bind(tape);
    const double temps[] = {t_c};
    return model.temperature_features(b, temps).value().reshaped({model.config().temperature_dim()});
}

SohQ predict_soh_q(const FullModel& model, const Tensor& aggregated, const Tensor& t_num) {
    const auto& cfg = model.config();
    if (aggregated.size() != cfg.pooled_dim() || t_num.size() != cfg.temperature_dim())
        fail(ErrorKind::Shape, "predict_soh_q: expected lengths " + std::to_string(cfg.pooled_dim()) + " and " +
                                   std::to_string(cfg.temperature_dim()));
    ad::Tape tape(ad::Tape::Mode::Inference);
    const auto b = model.bind(tape);
    const ad::Var out = model.soh_q_head(b, tape.constant(aggregated.reshaped({1, cfg.pooled_dim()})),
                                         tape.constant(t_num.reshaped({1, cfg.temperature_dim()})));
    return {out.value()[0], out.value()[1] * cfg.q_nominal_ah};
}

namespace {

using FeatureWriter = std::function<void(std::size_t row, std::span<double> out)>;

/// Shared tail of predict_cycle / predict_windows: encodes rows in chunks,
/// predicts SOC per row, then aggregates the rows named by `subset_rows`.
CyclePrediction run_cycle(const FullModel& model, std::vector<std::size_t> positions,
                          const FeatureWriter& write, const std::optional<std::vector<std::size_t>>& subset,
                          double t_c, std::size_t chunk) {
    const auto& cfg = model.config();
    const std::size_t n = positions.size();
    if (n == 0) fail(ErrorKind::Aggregation, "predict_cycle: no segments supplied");
    if (chunk == 0) chunk = n;

    std::vector<std::size_t> subset_rows;
    if (subset) {
        if (subset->empty()) fail(ErrorKind::Aggregation, "predict_cycle: empty segment subset");
        std::vector<std::size_t> wanted = *subset;
        std::sort(wanted.begin(), wanted.end());
        wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
        for (std::size_t p : wanted) {
            auto it = std::lower_bound(positions.begin(), positions.end(), p);
            if (it == positions.end() || *it != p)
                fail(ErrorKind::Index, "predict_cycle: subset position " + std::to_string(p) + " not supplied");
            subset_rows.push_back(static_cast<std::size_t>(it - positions.begin()));
        }
    } else {
        subset_rows.resize(n);
        for (std::size_t i = 0; i < n; ++i) subset_rows[i] = i;
    }

    const std::size_t w = cfg.window_size, d = cfg.pooled_dim();
    Tensor pooled({n, d});
    CyclePrediction pred;
    pred.positions = std::move(positions);
    pred.soc.resize(n);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t rows = std::min(chunk, n - start);
        Tensor batch({rows, 2, w});
        for (std::size_t r = 0; r < rows; ++r)
            write(start + r, batch.data().subspan(r * 2 * w, 2 * w));
        ad::Tape tape(ad::Tape::Mode::Inference);
        const auto b = model.bind(tape);
        const ad::Var enc = model.encode(b, tape.constant(std::move(batch)));
        const ad::Var soc = model.soc_head(b, enc);
        std::copy_n(enc.value().data().begin(), rows * d, pooled.data().begin() + static_cast<std::ptrdiff_t>(start * d));
        std::copy_n(soc.value().data().begin(), rows, pred.soc.begin() + static_cast<std::ptrdiff_t>(start));
    }

    ad::Tape tape(ad::Tape::Mode::Inference);
    const auto b = model.bind(tape);
    const ad::Var agg = ad::group_mean(tape.constant(std::move(pooled)), {subset_rows});
    const double temps[] = {t_c};
    const ad::Var out = model.soh_q_head(b, agg, model.temperature_features(b, temps));
    pred.soh = out.value()[0];
    pred.q_ah = out.value()[1] * cfg.q_nominal_ah;
    return pred;
}

}  // namespace

CyclePrediction predict_cycle(const FullModel& model, std::span<const Segment> segments,
                              const std::optional<std::vector<std::size_t>>& subset, double t_c) {
    const std::size_t w = model.config().window_size;
    std::vector<const Segment*> order;
    for (const auto& s : segments) {
        if (s.feature.shape() != Shape{2, w})
            fail(ErrorKind::Shape, "predict_cycle: segment feature must be 2x" + std::to_string(w));
        order.push_back(&s);
    }
    std::sort(order.begin(), order.end(), [](const Segment* a, const Segment* b) { return a->position < b->position; });
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && order[i]->position == order[i - 1]->position)
            fail(ErrorKind::Input, "predict_cycle: duplicate segment position " + std::to_string(order[i]->position));
        positions.push_back(order[i]->position);
    }
    return run_cycle(
        model, std::move(positions),
        [&order](std::size_t row, std::span<double> out) {
            std::copy(order[row]->feature.data().begin(), order[row]->feature.data().end(), out.begin());
        },
        subset, t_c, 256);
}

CyclePrediction predict_windows(const FullModel& model, const CycleWindows& windows,
                                const std::optional<std::vector<std::size_t>>& subset, double t_c,
                                std::size_t chunk) {
    if (windows.window_size() != model.config().window_size)
        fail(ErrorKind::Shape, "predict_windows: window_size " + std::to_string(windows.window_size()) +
                                   " does not match model window_size " + std::to_string(model.config().window_size));
    std::vector<std::size_t> positions(windows.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i + 1;
    return run_cycle(
        model, std::move(positions),
        [&windows](std::size_t row, std::span<double> out) { windows.write_feature(row + 1, out); }, subset, t_c,
        chunk);
}

}  // namespace sohnet
