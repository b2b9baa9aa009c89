#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sohnet/dataio.hpp"
#include "sohnet/error.hpp"
#include "sohnet/textio.hpp"
#include "support.hpp"

using namespace sohnet;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Io;
}

std::string profile_csv(int n_cycles, int points) {
    std::string s = "cycle,time_s,voltage_v,current_a\n";
    for (int c = 1; c <= n_cycles; ++c)
        for (int p = 0; p < points; ++p)
            s += std::to_string(c) + "," + std::to_string(p * 30) + "," + std::to_string(3.0 + 0.01 * p) + ",5\n";
    return s;
}

std::string capacity_csv(int n_cycles, double q3) {
    std::string s = "cycle,discharge_capacity_ah\n";
    for (int c = 1; c <= n_cycles; ++c) s += std::to_string(c) + "," + format_double(c == 3 ? q3 : 9.5) + "\n";
    return s;
}

RawCycle raw(std::vector<RawSample> samples) {
    RawCycle c;
    c.cycle_index = 1;
    c.samples = std::move(samples);
    c.discharge_capacity_ah = 1.0;
    return c;
}

}  // namespace

TEST_CASE("scale_voltage and scale_current endpoints and midpoints") {
    CHECK(scale_voltage(4.0) == 1.0);
    CHECK(scale_voltage(2.15) == 0.0);
    CHECK(scale_voltage(3.075) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(scale_current(5.0) == 1.0);
    CHECK(scale_current(0.5) == 0.0);
    CHECK(scale_current(2.75) == 0.5);
    CHECK(kind_of([] { scale_voltage(NAN); }) == ErrorKind::Numeric);
    CHECK(kind_of([] { scale_current(INFINITY); }) == ErrorKind::Numeric);
}

TEST_CASE("scaling is affine") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-10, 10), a(0, 1);
    for (int i = 0; i < 200; ++i) {
        const double x = u(rng), y = u(rng), al = a(rng);
        const double mix = al * x + (1 - al) * y;
        CHECK(scale_voltage(mix) == doctest::Approx(al * scale_voltage(x) + (1 - al) * scale_voltage(y)).epsilon(1e-12));
        CHECK(scale_current(mix) == doctest::Approx(al * scale_current(x) + (1 - al) * scale_current(y)).epsilon(1e-12));
    }
}

TEST_CASE("resample: knots, midpoints and grid length") {
    const auto same = resample(raw({{0, 2.15, 1}, {30, 3.0, 2}, {60, 4.0, 3}}));
    CHECK(same.voltages == std::vector<double>{2.15, 3.0, 4.0});
    CHECK(same.currents == std::vector<double>{1, 2, 3});

    const auto mid = resample(raw({{0, 3.0, 5}, {60, 4.0, 5}}));
    REQUIRE(mid.times.size() == 3);
    CHECK(mid.voltages[1] == 3.5);

    const auto grid = resample(raw({{0, 3, 5}, {40, 3.2, 5}, {95, 3.4, 5}}));
    CHECK(grid.times == std::vector<double>{0, 30, 60, 90});

    CHECK(kind_of([] { resample(raw({{0, 3, 5}, {0, 3.1, 5}, {30, 3.2, 5}})); }) == ErrorKind::Input);
    CHECK(kind_of([] { resample(raw({{0, 3, 5}})); }) == ErrorKind::Input);
}

TEST_CASE("resample: jittered input against a direct interpolation oracle") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> jit(-3, 3), val(2, 4);
    std::vector<RawSample> s{{1.5, val(rng), val(rng)}};
    for (int j = 1; j < 40; ++j) s.push_back({j * 30 + jit(rng), val(rng), val(rng)});
    const auto out = resample(raw(s));
    for (std::size_t g = 0; g < out.times.size(); ++g) {
        const double t = out.times[g];
        double want = s.front().voltage_v;
        for (std::size_t k = 0; k + 1 < s.size(); ++k)
            if (t >= s[k].time_s && t <= s[k + 1].time_s)
                want = s[k].voltage_v + (s[k + 1].voltage_v - s[k].voltage_v) * (t - s[k].time_s) /
                                            (s[k + 1].time_s - s[k].time_s);
        CHECK(out.voltages[g] == doctest::Approx(want).epsilon(1e-13));
    }
}

TEST_CASE("compute_soc_targets") {
    CHECK(compute_soc_targets(std::vector<double>{5, 5, 5, 5}, 30) ==
          std::vector<double>{0, 1.0 / 3, 2.0 / 3, 1});

    // Piecewise-linear current integrated on a fine grid.
    const std::vector<double> i{5, 5, 0.5, 0.5};
    const auto soc = compute_soc_targets(i, 30);
    const int fine = 30000;
    std::vector<double> cum{0};
    double q = 0;
    for (std::size_t k = 0; k + 1 < i.size(); ++k) {
        for (int j = 0; j < fine; ++j) {
            const double f = (j + 0.5) / fine;
            q += (i[k] + (i[k + 1] - i[k]) * f) * 30.0 / fine;
        }
        cum.push_back(q);
    }
    for (std::size_t k = 0; k < i.size(); ++k) CHECK(soc[k] == doctest::Approx(cum[k] / q).epsilon(1e-10));

    std::mt19937_64 rng(3);
    const auto currents = testing::random_values(57, rng, 0.0, 5.0);
    const auto any = compute_soc_targets(currents, 30);
    CHECK(any.front() == 0.0);
    CHECK(any.back() == 1.0);
    CHECK(std::is_sorted(any.begin(), any.end()));
    CHECK(kind_of([] { compute_soc_targets(std::vector<double>{0, 0, 0}, 30); }) == ErrorKind::Input);
}

TEST_CASE("compute_soh") {
    CHECK(compute_soh(10.0, 10.0) == 1.0);
    CHECK(compute_soh(8.0, 10.0) == 0.8);
    CHECK(compute_soh(10.3, 10.0) == doctest::Approx(1.03).epsilon(1e-15));
    for (double q : {0.1, 1.0, 7.3, 1e3}) CHECK(compute_soh(q, q) == 1.0);
    CHECK(kind_of([] { compute_soh(1.0, 0.0); }) == ErrorKind::Reference);
}

TEST_CASE("split_cycle_indices uses the chronological floor rule") {
    auto sizes = [](int n) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 1);
        const auto s = split_cycle_indices(idx);
        return std::tuple{s.train.size(), s.valid.size(), s.test.size()};
    };
    CHECK(sizes(100) == std::tuple{70u, 10u, 20u});
    CHECK(sizes(10) == std::tuple{7u, 1u, 2u});
    CHECK(sizes(13) == std::tuple{9u, 1u, 3u});
    CHECK(kind_of([&] { sizes(9); }) == ErrorKind::Split);

    std::vector<int> idx(37);
    std::iota(idx.begin(), idx.end(), 4);
    const auto s = split_cycle_indices(idx);
    CHECK(s.train.back() < s.valid.front());
    CHECK(s.valid.back() < s.test.front());
    CHECK(s.train.size() + s.valid.size() + s.test.size() == idx.size());
}

TEST_CASE("parse_cell: reference capacity, exclusions and errors") {
    const CellMeta meta{"25-B1-8", 25.0, {}, 1};
    const auto rec = parse_cell(profile_csv(3, 4), capacity_csv(3, 10.0), meta);
    CHECK(rec.reference_capacity_ah == 10.0);
    CHECK(rec.cycles.size() == 3);

    CellMeta excl = meta;
    excl.excluded_cycles = {91};
    const auto many = parse_cell(profile_csv(95, 3), capacity_csv(95, 10.0), excl);
    CHECK(many.cycles.size() == 94);
    CHECK(std::none_of(many.cycles.begin(), many.cycles.end(), [](const RawCycle& c) { return c.cycle_index == 91; }));

    CHECK(kind_of([&] { parse_cell("", capacity_csv(3, 10), meta); }) == ErrorKind::Parse);
    CHECK(kind_of([&] { parse_cell(profile_csv(3, 4), capacity_csv(2, 10), meta); }) == ErrorKind::Schema);
    CHECK(kind_of([&] {
              parse_cell(profile_csv(3, 4), "cycle,discharge_capacity_ah\n1,9\n2,9\n4,9\n", meta);
          }) == ErrorKind::Schema);
    CHECK(kind_of([&] {
              parse_cell(profile_csv(2, 4), "cycle,discharge_capacity_ah\n1,9\n2,9\n", meta);
          }) == ErrorKind::Reference);
    CHECK(kind_of([&] {
              parse_cell("cycle,time_s,voltage_v,current_a\n1,0,3.0,abc\n", capacity_csv(3, 10), meta);
          }) == ErrorKind::Parse);
}

TEST_CASE("parse errors carry line numbers") {
    try {
        parse_profile("cycle,time_s,voltage_v,current_a\n1,0,3,5\n1,30,3.1\n");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("prepare_cycle invariants") {
    const auto rec = parse_cell(profile_csv(3, 9), capacity_csv(3, 10.0), CellMeta{"c", 25.0, {}, 1});
    const auto pc = prepare_cycle(rec.cycles[0], rec.reference_capacity_ah);
    CHECK(pc.n_samples() == 9);
    CHECK(pc.i_scaled.size() == 9);
    CHECK(pc.soc_targets.size() == 9);
    CHECK(pc.soc_targets.back() == 1.0);
    CHECK(pc.soh_target == 0.95);
    CHECK(pc.q_target_ah == 9.5);
}

TEST_CASE("manifest round trip resolves relative paths") {
    testing::TempDir dir("manifest");
    write_text_file(dir.path() / "p.csv", profile_csv(12, 5));
    write_text_file(dir.path() / "q.csv", capacity_csv(12, 10.0));
    Manifest m;
    m.cells.push_back({"cell-a", 25.0, "p.csv", "q.csv", {5}, 1});
    write_text_file(dir.path() / "manifest.json", "// comment\n" + manifest_to_json(m));
    const Manifest back = read_manifest(dir.path() / "manifest.json");
    REQUIRE(back.cells.size() == 1);
    CHECK(back.cells[0].profile_path == dir.path() / "p.csv");
    CHECK(back.cells[0].excluded_cycles == std::vector<int>{5});
    const CellRecord rec = load_cell(back.cells[0]);
    CHECK(rec.cycles.size() == 11);
}
