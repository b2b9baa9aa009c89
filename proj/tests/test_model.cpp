#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sohnet/error.hpp"
#include "sohnet/model.hpp"
#include "sohnet/windowing.hpp"
#include "support.hpp"

using namespace sohnet;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.window_size = 16;
    c.encoder_channels = {4, 6};
    c.node_hidden = 5;
    c.node.n_steps = 2;
    c.soc_hidden = 7;
    c.head_hidden = 6;
    c.temp_embed_dim = 3;
    c.temp_ffn_hidden = 4;
    c.temp_ffn_dim = 2;
    return c;
}

ResampledCycle random_cycle(std::size_t n, std::mt19937_64& rng) {
    ResampledCycle c;
    c.cycle_index = 7;
    c.v_scaled = testing::random_values(n, rng, 0.0, 1.0);
    c.i_scaled = testing::random_values(n, rng, 0.0, 1.0);
    c.soc_targets = testing::random_values(n, rng, 0.0, 1.0);
    return c;
}

// Direct loops: 1×k conv over the time axis with stride and zero padding,
// relu, then the time mean.
std::vector<double> conv_pool_oracle(const FullModel& m, const Tensor& feature) {
    const auto& cfg = m.config();
    std::size_t c_in = 1, w = cfg.window_size;
    std::vector<double> x(feature.data().begin(), feature.data().end());  // c × 2 × w
    for (std::size_t s = 0; s < cfg.encoder_channels.size(); ++s) {
        const Tensor& kw = m.params().at("encoder." + std::to_string(s) + ".weight").value;
        const Tensor& kb = m.params().at("encoder." + std::to_string(s) + ".bias").value;
        const std::size_t c_out = cfg.encoder_channels[s], k = cfg.encoder_kernel;
        const std::size_t w_out = (w + 2 * cfg.encoder_pad - k) / cfg.encoder_stride + 1;
        std::vector<double> y(c_out * 2 * w_out);
        for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t t = 0; t < w_out; ++t) {
                    long double acc = kb[o];
                    for (std::size_t i = 0; i < c_in; ++i)
                        for (std::size_t j = 0; j < k; ++j) {
                            const long long src = static_cast<long long>(t * cfg.encoder_stride + j) -
                                                  static_cast<long long>(cfg.encoder_pad);
                            if (src < 0 || src >= static_cast<long long>(w)) continue;
                            acc += static_cast<long double>(kw[(o * c_in + i) * k + j]) *
                                   x[(i * 2 + h) * w + static_cast<std::size_t>(src)];
                        }
                    y[(o * 2 + h) * w_out + t] = std::max(0.0, static_cast<double>(acc));
                }
        x = std::move(y);
        c_in = c_out;
        w = w_out;
    }
    std::vector<double> pooled(c_in * 2);
    for (std::size_t r = 0; r < pooled.size(); ++r) {
        long double acc = 0;
        for (std::size_t t = 0; t < w; ++t) acc += x[r * w + t];
        pooled[r] = static_cast<double>(acc / w);
    }
    return pooled;
}

}  // namespace

TEST_CASE("default layout follows the documented shape chain") {
    ModelConfig cfg;
    const std::vector<Shape> want{{2, 128}, {1, 2, 128}, {64, 2, 4}, {64, 2, 4}, {64, 2, 1}, {128}};
    CHECK(cfg.shape_chain() == want);
    CHECK(cfg.pooled_dim() + cfg.temperature_dim() == 160);

    FullModel m(cfg, 1);
    std::mt19937_64 rng(3);
    std::vector<Shape> observed;
    const Tensor pooled = encode_segment(m, testing::random_tensor({2, 128}, rng, 0.0, 1.0), &observed);
    CHECK(observed == want);
    CHECK(pooled.shape() == Shape{128});
}

TEST_CASE("inconsistent layouts fail loudly") {
    ModelConfig collapse = small_config();
    collapse.window_size = 4;
    collapse.encoder_pad = 0;
    CHECK_THROWS_AS(collapse.validate(), Error);
    try {
        collapse.validate();
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Shape);
    }

    FullModel m(small_config(), 1);
    ParamStore broken = m.params();
    broken.at("soc.fc1.weight").value = Tensor({7, 3});
    try {
        FullModel bad(small_config(), broken);
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Shape);
        CHECK(std::string(e.what()).find("soc.fc1.weight") != std::string::npos);
    }

    try {
        encode_segment(m, Tensor({2, 8}));
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Shape);
    }
}

TEST_CASE("zero dynamics field reduces the encoder to conv + pool") {
    FullModel m(small_config(), 5);
    for (const char* name : {"node.conv2.weight", "node.conv2.bias"}) {
        Tensor& t = m.params().at(name).value;
        std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor feature = testing::random_tensor({2, 16}, rng, 0.0, 1.0);
        const Tensor got = encode_segment(m, feature);
        const auto want = conv_pool_oracle(m, feature);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("temperature code") {
    ModelConfig cfg;  // 0..45 °C, 9 bins
    auto code = temperature_code(cfg, 0.0);
    CHECK(code.normalized == 0.0);
    CHECK(code.bin == 0);
    code = temperature_code(cfg, 22.5);
    CHECK(code.normalized == doctest::Approx(0.5));
    CHECK(code.bin == 4);
    CHECK(temperature_code(cfg, 12.0).bin == 2);
    CHECK(temperature_code(cfg, 40.0).bin == 8);
    CHECK(temperature_code(cfg, 45.0).bin == 8);
    CHECK(temperature_code(cfg, 47.0).bin == 8);
    CHECK(temperature_code(cfg, -3.0).bin == 0);
    CHECK_FALSE(temperature_code(cfg, -3.0).out_of_range);
    CHECK_FALSE(temperature_code(cfg, 50.0).out_of_range);
    CHECK(temperature_code(cfg, -6.0).out_of_range);
    CHECK(temperature_code(cfg, 51.0).out_of_range);
    CHECK_THROWS_AS(temperature_code(cfg, std::nan("")), Error);
}

TEST_CASE("cycle prediction ignores segment order") {
    FullModel m(small_config(), 11);
    std::mt19937_64 rng(4);
    const ResampledCycle cycle = random_cycle(40, rng);
    const auto segs = build_segments(cycle, {16, kGridPeriodS}, 25.0).segments;
    const CyclePrediction ref = predict_cycle(m, segs, std::nullopt, 25.0);
    for (int trial = 0; trial < 5; ++trial) {
        auto shuffled = segs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const CyclePrediction got = predict_cycle(m, shuffled, std::nullopt, 25.0);
        CHECK(got.positions == ref.positions);
        CHECK(got.soc == ref.soc);
        CHECK(got.soh == ref.soh);
        CHECK(got.q_ah == ref.q_ah);
    }
}

TEST_CASE("subset aggregation matches the manual pipeline") {
    FullModel m(small_config(), 12);
    std::mt19937_64 rng(5);
    const ResampledCycle cycle = random_cycle(30, rng);
    const auto segs = build_segments(cycle, {16, kGridPeriodS}, 10.0).segments;
    const std::vector<std::size_t> subset{3, 9, 10, 30};

    const CyclePrediction full = predict_cycle(m, segs, subset, 10.0);
    std::vector<Segment> only;
    for (const auto& s : segs)
        if (std::find(subset.begin(), subset.end(), s.position) != subset.end()) only.push_back(s);
    const CyclePrediction part = predict_cycle(m, only, std::nullopt, 10.0);
    CHECK(part.soh == full.soh);
    CHECK(part.q_ah == full.q_ah);

    std::vector<PooledFeature> pooled;
    for (std::size_t p : subset) pooled.push_back({p, encode_segment(m, segs[p - 1].feature)});
    const SohQ manual = predict_soh_q(m, aggregate_cycle(pooled), encode_temperature(m, 10.0));
    CHECK(manual.soh == doctest::Approx(full.soh).epsilon(1e-12));
    CHECK(manual.q_ah == doctest::Approx(full.q_ah).epsilon(1e-12));
    for (std::size_t i = 0; i < segs.size(); ++i)
        CHECK(predict_soc(m, encode_segment(m, segs[i].feature)) == doctest::Approx(full.soc[i]).epsilon(1e-12));

    CHECK_THROWS_AS(predict_cycle(m, segs, std::vector<std::size_t>{}, 10.0), Error);
    CHECK_THROWS_AS(predict_cycle(m, only, std::vector<std::size_t>{4}, 10.0), Error);
}

TEST_CASE("windowed inference is chunk invariant and matches materialized segments") {
    FullModel m(small_config(), 13);
    std::mt19937_64 rng(6);
    const ResampledCycle cycle = random_cycle(53, rng);
    const CycleWindows windows(cycle, {16, kGridPeriodS});
    const auto segs = build_segments(cycle, {16, kGridPeriodS}, 33.0).segments;
    const CyclePrediction ref = predict_cycle(m, segs, std::nullopt, 33.0);
    for (std::size_t chunk : {1, 7, 53, 256}) {
        const CyclePrediction got = predict_windows(m, windows, std::nullopt, 33.0, chunk);
        CHECK(got.soc == ref.soc);
        CHECK(got.soh == ref.soh);
        CHECK(got.q_ah == ref.q_ah);
    }
}

TEST_CASE("capacity output scales with the nominal capacity") {
    ModelConfig a = small_config();
    FullModel ma(a, 14);
    ModelConfig b = a;
    b.q_nominal_ah = 2.0 * a.q_nominal_ah;
    FullModel mb(b, ma.params());
    std::mt19937_64 rng(7);
    const ResampledCycle cycle = random_cycle(20, rng);
    const CycleWindows windows(cycle, {16, kGridPeriodS});
    const auto pa = predict_windows(ma, windows, std::nullopt, 25.0);
    const auto pb = predict_windows(mb, windows, std::nullopt, 25.0);
    CHECK(pb.q_ah == 2.0 * pa.q_ah);
    CHECK(pb.soh == pa.soh);
}

TEST_CASE("initialization is seeded") {
    FullModel a(small_config(), 21), b(small_config(), 21), c(small_config(), 22);
    const auto& pa = a.params().params();
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const std::span<const double> x = pa[i].value.data(), y = b.params().params()[i].value.data(),
                                     z = c.params().params()[i].value.data();
        all_equal = all_equal && std::equal(x.begin(), x.end(), y.begin(), y.end());
        any_diff = any_diff || !std::equal(x.begin(), x.end(), z.begin(), z.end());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("config json round trip") {
    ModelConfig cfg = small_config();
    cfg.t_min_c = -10.0;
    cfg.q_nominal_ah = 3.5;
    const ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.encoder_channels == cfg.encoder_channels);
}
