#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sohnet/error.hpp"
#include "sohnet/windowing.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace sohnet;

namespace {

ResampledCycle make_cycle(std::vector<double> v, std::vector<double> i) {
    ResampledCycle c;
    c.cycle_index = 7;
    c.v_scaled = std::move(v);
    c.i_scaled = std::move(i);
    c.soc_targets.resize(c.v_scaled.size());
    for (std::size_t k = 0; k < c.soc_targets.size(); ++k)
        c.soc_targets[k] = static_cast<double>(k) / static_cast<double>(c.soc_targets.size());
    c.soh_target = 0.9;
    c.q_target_ah = 9.0;
    return c;
}

}  // namespace

TEST_CASE("documented three-sample example") {
    const auto c = make_cycle({0.1, 0.2, 0.3}, {0.9, 0.9, 0.9});
    const auto segs = build_segments(c, WindowConfig{4, 30}, 25.0);
    REQUIRE(segs.segments.size() == 3);
    const auto& s1 = segs.segments[0].feature;
    const auto& s3 = segs.segments[2].feature;
    CHECK(s1.shape() == Shape{2, 4});
    CHECK(std::vector<double>(s1.values().begin(), s1.values().begin() + 4) == std::vector<double>{0, 0, 0, 0.1});
    CHECK(std::vector<double>(s3.values().begin(), s3.values().begin() + 4) == std::vector<double>{0, 0.1, 0.2, 0.3});
    CHECK(std::vector<double>(s3.values().begin() + 4, s3.values().end()) == std::vector<double>{0, 0.9, 0.9, 0.9});
    CHECK(segs.temperature_c == 25.0);
    CHECK(segs.soh_target == 0.9);
}

TEST_CASE("prepend constants scale to zero") {
    CHECK(scale_voltage(kVoltageLow) == 0.0);
    CHECK(scale_current(kCurrentLow) == 0.0);
}

TEST_CASE("single-sample cycle has window_size - 1 leading zeros") {
    const auto segs = build_segments(make_cycle({0.4}, {0.6}), WindowConfig{8, 30}, 0.0);
    REQUIRE(segs.segments.size() == 1);
    const auto& f = segs.segments[0].feature.values();
    for (std::size_t k = 0; k < 7; ++k) {
        CHECK(f[k] == 0.0);
        CHECK(f[8 + k] == 0.0);
    }
    CHECK(f[7] == 0.4);
    CHECK(f[15] == 0.6);
}

TEST_CASE("segment_time_span") {
    CHECK(segment_time_span(WindowConfig{128, 30}) == 3810.0);
    CHECK(segment_time_span(WindowConfig{2, 30}) == 30.0);
    CHECK(segment_time_span(WindowConfig{4, 30}) == 90.0);
}

TEST_CASE("randomized cycles equal the prepend-then-slice oracle bit for bit") {
    const auto r = testing::windowing_oracle(1234);
    CHECK(r.cycles == 200);
    CHECK(r.count_mismatches == 0);
    CHECK(r.feature_mismatches == 0);
}

TEST_CASE("lazy view agrees with materialized segments") {
    std::mt19937_64 rng(77);
    for (std::size_t w : {2u, 4u, 8u, 128u}) {
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + rng() % 50;
            const auto c = make_cycle(testing::random_values(n, rng, 0.0, 1.0), testing::random_values(n, rng, 0.0, 1.0));
            const auto segs = build_segments(c, WindowConfig{w, 30}, 25.0);
            // Lazy view agrees with the materialized segments.
            const CycleWindows view(c, WindowConfig{w, 30});
            std::vector<double> buf(2 * w);
            for (std::size_t s = 1; s <= n; ++s) {
                view.write_feature(s, buf);
                CHECK(buf == segs.segments[s - 1].feature.values());
            }
        }
    }
}

TEST_CASE("neighbouring segments overlap by window_size - 1") {
    std::mt19937_64 rng(5);
    const std::size_t w = 8, n = 30;
    const auto c = make_cycle(testing::random_values(n, rng, 0.1, 1.0), testing::random_values(n, rng, 0.1, 1.0));
    const auto segs = build_segments(c, WindowConfig{w, 30}, 25.0);
    for (std::size_t s = 0; s + 1 < n; ++s)
        for (std::size_t row = 0; row < 2; ++row)
            for (std::size_t k = 0; k + 1 < w; ++k)
                CHECK(segs.segments[s].feature[row * w + k + 1] == segs.segments[s + 1].feature[row * w + k]);
    for (std::size_t s = w; s <= n; ++s)
        for (double x : segs.segments[s - 1].feature.values()) CHECK(x != 0.0);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(build_segments(make_cycle({}, {}), WindowConfig{4, 30}, 25.0), Error);
    CHECK_THROWS_AS(WindowConfig({1, 30}).validate(), Error);
    const auto c = make_cycle({0.1, 0.2}, {0.3, 0.4});
    const CycleWindows view(c, WindowConfig{4, 30});
    CHECK_THROWS_AS(view.segment(0), Error);
    CHECK_THROWS_AS(view.segment(3), Error);
}

TEST_CASE("debug CSV dump lists one row per segment and channel") {
    const auto segs = build_segments(make_cycle({0.1, 0.2}, {0.3, 0.4}), WindowConfig{2, 30}, 25.0);
    const std::string csv = segments_to_csv(segs);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
}
