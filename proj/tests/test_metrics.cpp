#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "sohnet/error.hpp"
#include "sohnet/metrics.hpp"
#include "support.hpp"

using namespace sohnet;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.window_size = 8;
    c.encoder_channels = {3, 4};
    c.node_hidden = 4;
    c.soc_hidden = 5;
    c.head_hidden = 5;
    c.temp_embed_dim = 2;
    c.temp_ffn_hidden = 3;
    c.temp_ffn_dim = 2;
    return c;
}

Dataset oracle_dataset() {
    std::mt19937_64 rng(8);
    Dataset d;
    for (int c = 0; c < 3; ++c) {
        PreparedCell cell;
        cell.label = "c" + std::to_string(c);
        cell.temperature_c = c == 2 ? 45.0 : 25.0;
        cell.n_parallel = c == 1 ? 4 : 1;
        cell.q3_ah = 10.0 + c;
        for (int k = 3; k < 9; ++k) {
            ResampledCycle cy;
            cy.cycle_index = k;
            cy.v_scaled = testing::random_values(6, rng);
            cy.i_scaled = testing::random_values(6, rng);
            cy.soc_targets = testing::random_values(6, rng, 0.0, 1.0);
            cy.q_target_ah = cell.q3_ah * (1.0 - 0.01 * k);
            cy.soh_target = compute_soh(cy.q_target_ah, cell.q3_ah);
            cell.cycles.push_back(cy);
            cell.cycle_split.push_back(Split::Test);
        }
        d.cells.push_back(cell);
    }
    return d;
}

RawCycle raw_cycle(std::mt19937_64& rng) {
    RawCycle c;
    c.cycle_index = 5;
    double t = 0.0;
    for (int i = 0; i < 40; ++i) {
        c.samples.push_back({t, 2.2 + 0.04 * i, 5.0 - 0.05 * i});
        t += std::uniform_real_distribution<double>(27.0, 33.0)(rng);
    }
    return c;
}

}  // namespace

TEST_CASE("r2 fixtures") {
    const std::vector<double> truth{1, 2, 3};
    CHECK(r2(truth, truth) == 1.0);
    CHECK(std::abs(r2(std::vector<double>{2, 2, 2}, truth)) <= 1e-12);
    CHECK(std::abs(r2(std::vector<double>{1.1, 1.9, 3.2}, truth) - 0.97) <= 1e-12);
    CHECK(r2_avg(0.9, 0.7) == doctest::Approx(0.8));
    CHECK_THROWS_AS(r2(std::vector<double>{1, 2}, std::vector<double>{3, 3}), Error);
    CHECK_THROWS_AS(r2(std::vector<double>{1}, std::vector<double>{1}), Error);
    CHECK_THROWS_AS(r2(std::vector<double>{1, 2}, truth), Error);
}

TEST_CASE("error fixtures") {
    const std::vector<double> truth{1, 2, 3}, pred{1.1, 1.9, 3.2};
    CHECK(std::abs(mean_squared_error(pred, truth) - 0.02) <= 1e-12);
    CHECK(std::abs(mean_absolute_error(pred, truth) - 0.4 / 3.0) <= 1e-12);
    CHECK(std::abs(max_absolute_error(pred, truth) - 0.2) <= 1e-12);
    const TargetMetrics m = target_metrics(pred, truth, true);
    CHECK(m.count == 3);
    CHECK(std::abs(m.max_abs_err_pct - 20.0) <= 1e-10);
    CHECK(std::isnan(target_metrics(pred, truth, false).max_abs_err_pct));
    CHECK(std::isnan(target_metrics(pred, std::vector<double>{2, 2, 2}, false).r2));
}

TEST_CASE("soh_cali") {
    CHECK(soh_cali(10.0, 10.0) == 1.0);
    CHECK(soh_cali(9.7, 10.0) == doctest::Approx(0.97));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 50.0);
    for (int i = 0; i < 100; ++i) {
        const double q = u(rng), q3 = u(rng);
        CHECK(soh_cali(q, q3) == compute_soh(q, q3));
        CHECK(soh_cali(q, q3) * q3 == doctest::Approx(q).epsilon(1e-15));
    }
    try {
        soh_cali(9.0, 0.0);
        FAIL("expected a reference error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Reference);
    }
}

TEST_CASE("perfect predictor report") {
    const Dataset d = oracle_dataset();
    const auto refs = select_cycles(d, {});
    const EvalReport rep = evaluate(OraclePredictor{}, d, refs);
    CHECK(rep.cells == 3);
    CHECK(rep.cycles == 18);
    CHECK(rep.segments == 108);
    for (const TargetMetrics* m : {&rep.soc, &rep.q, &rep.soh_pred, &rep.soh_cali}) {
        CHECK(m->r2 == 1.0);
        CHECK(m->mse == 0.0);
        CHECK(m->mae == 0.0);
        CHECK(m->max_abs_err == 0.0);
    }
    REQUIRE(rep.by_temperature.size() == 2);
    CHECK(rep.by_temperature[0].temperature_c == 25.0);
    CHECK(rep.by_temperature[0].cycles == 12);
    // packs are reported in pack units
    CHECK(rep.results[6].n_parallel == 4);
    CHECK(rep.results[6].q_true == 4.0 * d.cells[1].cycles[0].q_target_ah);

    const auto j = nlohmann::json::parse(report_to_json(rep), nullptr, true, true);
    CHECK(j.is_object());
    const std::string csv = predictions_csv(rep);
    CHECK(csv.find("cell,cycle,q_true,q_pred,soh_true,soh_pred,soh_cali") != std::string::npos);
    CHECK(soc_parity_csv(rep).find("cell,cycle,position,soc_true,soc_pred") != std::string::npos);
    CHECK(soh_trace_csv(rep).find("cell,temperature_c,cycle,soh_true,soh_pred,soh_cali") != std::string::npos);
}

TEST_CASE("fixed reference capacity mode") {
    const Dataset d = oracle_dataset();
    const auto refs = select_cycles(d, {});
    EvalOptions opt;
    opt.fixed_q3_ah = 10.0;
    const EvalReport rep = evaluate(OraclePredictor{}, d, refs, opt);
    for (const auto& r : rep.results)
        CHECK(r.soh_cali == doctest::Approx(r.q_pred / (r.n_parallel * 10.0)).epsilon(1e-15));
    CHECK(rep.soh_cali.mae > 0.0);
}

TEST_CASE("empty split is an error") {
    const Dataset d = oracle_dataset();
    try {
        evaluate(OraclePredictor{}, d, std::vector<CycleRef>{});
        FAIL("expected a split error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Split);
    }
}

TEST_CASE("model predictor agrees with direct inference") {
    FullModel m(small_config(), 3);
    const Dataset d = oracle_dataset();
    const auto refs = select_cycles(d, {});
    const EvalReport rep = evaluate(ModelPredictor(m, 5), d, refs);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& cell = d.cells[refs[i].cell];
        const CycleWindows w(cell.cycles[refs[i].cycle], {8, kGridPeriodS});
        const CyclePrediction p = predict_windows(m, w, std::nullopt, cell.temperature_c);
        CHECK(rep.results[i].soc_pred == p.soc);
        CHECK(rep.results[i].q_pred == cell.n_parallel * p.q_ah);
        CHECK(rep.results[i].soh_pred == p.soh);
    }
}

TEST_CASE("pack inference: n = 1 is the single-cell path, n = 4 scales exactly") {
    FullModel m(small_config(), 4);
    std::mt19937_64 rng(6);
    const RawCycle cell = raw_cycle(rng);
    const ResampledCycle resampled = resample_features(cell);
    const CycleWindows w(resampled, {8, kGridPeriodS});
    const CyclePrediction single = predict_windows(m, w, std::nullopt, 25.0);

    const PackPrediction one = pack_predict(m, cell, 1, 25.0);
    CHECK(one.soc == single.soc);
    CHECK(one.soh == single.soh);
    CHECK(one.pack_q_ah == single.q_ah);

    RawCycle pack = cell;
    for (auto& s : pack.samples) s.current_a *= 4.0;
    const PackPrediction four = pack_predict(m, pack, 4, 25.0);
    CHECK(four.soc == single.soc);
    CHECK(four.soh == single.soh);
    CHECK(four.cell_q_ah == single.q_ah);
    CHECK(four.pack_q_ah == 4.0 * single.q_ah);

    const std::vector<std::size_t> subset{10, 20, 30};
    const PackPrediction sub = pack_predict(m, pack, 4, 25.0, subset);
    const CyclePrediction want = predict_windows(m, w, subset, 25.0);
    CHECK(sub.soh == want.soh);
    CHECK(sub.pack_q_ah == 4.0 * want.q_ah);
    CHECK_THROWS_AS(pack_predict(m, pack, 0, 25.0), Error);
}
