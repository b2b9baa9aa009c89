#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sohnet/autodiff.hpp"
#include "sohnet/dataio.hpp"
#include "sohnet/windowing.hpp"
#include "support.hpp"

// Checks shared by the unit tests and the acceptance harness.

namespace testing {

struct PrimitiveCheck {
    std::string name;
    double worst = 0.0;  // max relative error over all points
};

namespace detail {

// Contracting with fixed random weights avoids symmetric cancellation.
inline sohnet::ad::Var dot_with(sohnet::ad::Tape& t, sohnet::ad::Var y, std::uint64_t seed) {
    using namespace sohnet;
    std::mt19937_64 rng(seed);
    const Tensor w = random_tensor({y.value().size()}, rng, 0.5, 1.5);
    ad::Var flat = ad::reshape(y, {1, y.value().size()});
    return ad::sum(ad::linear(flat, t.constant(w.reshaped({1, w.size()})), std::nullopt));
}

}  // namespace detail

/// Central-difference grad_check of every differentiable primitive at
/// `points` random inputs each.
inline std::vector<PrimitiveCheck> primitive_gradchecks(int points = 20, double eps = 1e-5) {
    using namespace sohnet;
    using namespace sohnet::ad;
    using detail::dot_with;
    using Fn = std::function<Var(Tape&, Var)>;

    std::mt19937_64 prng(42);
    const Tensor w_conv = random_tensor({3, 2, 2, 3}, prng);
    const Tensor b_conv = random_tensor({3}, prng);
    const Tensor x_conv = random_tensor({2, 2, 3, 7}, prng);
    const Tensor w_lin = random_tensor({4, 5}, prng);
    const Tensor b_lin = random_tensor({4}, prng);
    const Tensor x_lin = random_tensor({3, 5}, prng);
    const Tensor table = random_tensor({6, 4}, prng);
    const Tensor target = random_tensor({6}, prng);
    const ConvOptions opt{1, 2, 1, 1};

    std::vector<PrimitiveCheck> out;
    auto check = [&](const char* name, Shape shape, const Fn& f, double lo = -1.0, double hi = 1.0) {
        std::mt19937_64 rng(std::hash<std::string>{}(name));
        PrimitiveCheck c{name, 0.0};
        for (int i = 0; i < points; ++i) c.worst = std::max(c.worst, grad_check(f, random_tensor(shape, rng, lo, hi), eps));
        out.push_back(c);
    };

    check("conv2d/input", x_conv.shape(), [&](Tape& t, Var x) {
        return dot_with(t, conv2d(x, t.constant(w_conv), t.constant(b_conv), opt), 1);
    });
    check("conv2d/weight", w_conv.shape(), [&](Tape& t, Var w) {
        return dot_with(t, conv2d(t.constant(x_conv), w, t.constant(b_conv), opt), 2);
    });
    check("conv2d/bias", b_conv.shape(), [&](Tape& t, Var b) {
        return dot_with(t, conv2d(t.constant(x_conv), t.constant(w_conv), b, opt), 3);
    });
    check("linear/input", x_lin.shape(), [&](Tape& t, Var x) {
        return dot_with(t, linear(x, t.constant(w_lin), t.constant(b_lin)), 4);
    });
    check("linear/weight", w_lin.shape(), [&](Tape& t, Var w) {
        return dot_with(t, linear(t.constant(x_lin), w, t.constant(b_lin)), 5);
    });
    check("linear/bias", b_lin.shape(), [&](Tape& t, Var b) {
        return dot_with(t, linear(t.constant(x_lin), t.constant(w_lin), b), 6);
    });
    check("linear/vector", {5}, [&](Tape& t, Var x) {
        return dot_with(t, linear(x, t.constant(w_lin), t.constant(b_lin)), 7);
    });
    check("relu", {3, 8}, [&](Tape& t, Var x) { return dot_with(t, relu(x), 8); });
    check("tanh", {3, 8}, [&](Tape& t, Var x) { return dot_with(t, ad::tanh(x), 9); }, -2.0, 2.0);
    check("avg_pool_last", {2, 3, 5}, [&](Tape& t, Var x) { return dot_with(t, avg_pool_last(x), 10); });
    check("mean_over_set", {4}, [&](Tape& t, Var x) {
        const std::vector<Var> set{x, t.constant(Tensor({4}, {1, 2, 3, 4})), scale(x, 2.0)};
        return dot_with(t, mean_over_set(set), 11);
    });
    check("group_mean", {5, 3}, [&](Tape& t, Var x) {
        return dot_with(t, group_mean(x, {{0, 2, 4}, {1}, {3, 1}}), 12);
    });
    check("concat", {2, 3}, [&](Tape& t, Var x) { return dot_with(t, concat(x, ad::tanh(x)), 13); });
    check("mse", {6}, [&](Tape& t, Var x) { return mse(x, t.constant(target)); });
    check("embedding_lookup", table.shape(), [&](Tape& t, Var tab) {
        return dot_with(t, embedding_lookup(tab, 4), 14);
    });
    check("embedding_rows", table.shape(), [&](Tape& t, Var tab) {
        const std::vector<std::size_t> idx{5, 0, 5, 2};
        return dot_with(t, embedding_rows(tab, idx), 15);
    });
    check("add/sub/scale", {4}, [&](Tape& t, Var x) {
        return dot_with(t, sub(add(x, scale(x, 3.0)), ad::tanh(x)), 16);
    });
    check("lincomb", {4}, [&](Tape& t, Var x) {
        const std::vector<Var> terms{x, ad::tanh(x), t.constant(Tensor({4}, 1.0))};
        return dot_with(t, lincomb(terms, std::vector<double>{0.3, -1.2, 2.0}), 17);
    });
    check("reshape/select_col", {4, 3}, [&](Tape& t, Var x) {
        return dot_with(t, select_col(reshape(x, {3, 4}), 2), 18);
    });
    check("sum/sum_squares", {5}, [&](Tape&, Var x) { return add(sum(x), sum_squares(x)); });
    return out;
}

struct WindowingOracle {
    std::size_t cycles = 0;
    std::size_t count_mismatches = 0;    // segment count != N_k
    std::size_t feature_mismatches = 0;  // any segment not bit-identical
};

/// Random raw cycles (N_k in [1, 50]) against the brute-force oracle: prepend
/// w − 1 raw low constants, scale everything, then slice.
inline WindowingOracle windowing_oracle(std::uint64_t seed, int trials_per_width = 50) {
    using namespace sohnet;
    WindowingOracle r;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(1, 50);
    std::uniform_real_distribution<double> volts(2.0, 4.1), amps(0.3, 5.2);
    for (std::size_t w : {2u, 4u, 8u, 128u}) {
        for (int trial = 0; trial < trials_per_width; ++trial) {
            const auto n = static_cast<std::size_t>(len(rng));
            std::vector<double> raw_v(n), raw_i(n);
            for (std::size_t k = 0; k < n; ++k) {
                raw_v[k] = volts(rng);
                raw_i[k] = amps(rng);
            }
            ResampledCycle c;
            for (std::size_t k = 0; k < n; ++k) {
                c.v_scaled.push_back(scale_voltage(raw_v[k]));
                c.i_scaled.push_back(scale_current(raw_i[k]));
                c.soc_targets.push_back(static_cast<double>(k) / static_cast<double>(n));
            }
            const auto segs = build_segments(c, WindowConfig{w, 30}, 25.0);
            ++r.cycles;
            if (segs.segments.size() != n) {
                ++r.count_mismatches;
                continue;
            }
            std::vector<double> pv(w - 1, kVoltageLow), pi(w - 1, kCurrentLow);
            pv.insert(pv.end(), raw_v.begin(), raw_v.end());
            pi.insert(pi.end(), raw_i.begin(), raw_i.end());
            for (double& x : pv) x = scale_voltage(x);
            for (double& x : pi) x = scale_current(x);
            bool same = true;
            for (std::size_t s = 1; s <= n; ++s) {
                const auto& seg = segs.segments[s - 1];
                std::vector<double> want(pv.begin() + static_cast<long>(s - 1), pv.begin() + static_cast<long>(s - 1 + w));
                want.insert(want.end(), pi.begin() + static_cast<long>(s - 1), pi.begin() + static_cast<long>(s - 1 + w));
                same = same && seg.position == s && seg.soc_target == c.soc_targets[s - 1] &&
                       seg.feature.values() == want;
            }
            if (!same) ++r.feature_mismatches;
        }
    }
    return r;
}

}  // namespace testing
