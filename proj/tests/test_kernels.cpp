#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <omp.h>

#include "sohnet/error.hpp"
#include "sohnet/kernels.hpp"
#include "support.hpp"

using namespace sohnet;
using namespace sohnet::kernels;

namespace {

// Naive triple loop in double, independent of both kernel families.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                               const std::vector<double>& b) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double s = 0.0L;
            for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = static_cast<double>(s);
        }
    return c;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol).scale(1.0));
}

ConvGeometry random_geometry(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> small(1, 4), kern(1, 5), stride(1, 3), pad(0, 2), len(1, 24);
    ConvGeometry g;
    g.batch = small(rng);
    g.in_channels = small(rng);
    g.out_channels = small(rng);
    g.in_h = small(rng);
    g.in_w = len(rng);
    g.kernel_h = std::min<std::size_t>(small(rng), g.in_h);
    g.kernel_w = kern(rng);
    g.stride_h = stride(rng);
    g.stride_w = stride(rng);
    g.pad_h = pad(rng) % g.kernel_h;
    g.pad_w = pad(rng) % g.kernel_w;
    if (g.in_w + 2 * g.pad_w < g.kernel_w) g.in_w = g.kernel_w;
    return g;
}

}  // namespace

TEST_CASE("gemm: reference and parallel match a naive product") {
    std::mt19937_64 rng(7);
    for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, {3u, 5u, 7u}, {4u, 32u, 9u}, {13u, 70u, 33u}, {64u, 160u, 128u}}) {
        const auto a = testing::random_values(m * k, rng);
        const auto b = testing::random_values(k * n, rng);
        const auto want = naive_gemm(m, n, k, a, b);
        std::vector<double> ref(m * n), par(m * n);
        reference::gemm(m, n, k, a.data(), b.data(), ref.data());
        parallel::gemm(m, n, k, a.data(), b.data(), par.data());
        check_close(ref, want, 1e-13);
        check_close(par, want, 1e-13);
    }
}

TEST_CASE("gemm: each row is independent of the rest of the batch") {
    std::mt19937_64 rng(11);
    const std::size_t m = 37, n = 45, k = 19;
    const auto a = testing::random_values(m * k, rng);
    const auto b = testing::random_values(k * n, rng);
    std::vector<double> full(m * n);
    parallel::gemm(m, n, k, a.data(), b.data(), full.data());
    for (std::size_t start : {0u, 5u, 36u}) {
        const std::size_t rows = std::min<std::size_t>(3, m - start);
        std::vector<double> part(rows * n);
        parallel::gemm(rows, n, k, a.data() + start * k, b.data(), part.data());
        for (std::size_t i = 0; i < rows * n; ++i) CHECK(part[i] == full[start * n + i]);
    }
}

TEST_CASE("gemm_nt equals gemm against the explicit transpose") {
    std::mt19937_64 rng(3);
    for (auto [m, n, k] : {std::tuple{1u, 1u, 1u}, {5u, 3u, 17u}, {8u, 40u, 300u}, {3u, 9u, 1031u}}) {
        const auto a = testing::random_values(m * k, rng);
        const auto b = testing::random_values(n * k, rng);
        std::vector<double> bt(k * n);
        parallel::transpose(n, k, b.data(), bt.data());
        const auto want = naive_gemm(m, n, k, a, bt);
        std::vector<double> got(m * n);
        parallel::gemm_nt(m, n, k, a.data(), b.data(), got.data());
        check_close(got, want, 1e-12);
    }
}

TEST_CASE("conv2d: documented small case against a direct loop") {
    // 1×2×6 input, kernel 2×1×1×3, stride (1,2), pad (0,1)
    std::mt19937_64 rng(5);
    ConvGeometry g;
    g.in_channels = 1;
    g.in_h = 2;
    g.in_w = 6;
    g.out_channels = 2;
    g.kernel_h = 1;
    g.kernel_w = 3;
    g.stride_w = 2;
    g.pad_w = 1;
    REQUIRE(g.out_w() == 3);
    const auto x = testing::random_values(g.input_size(), rng);
    const auto w = testing::random_values(g.weight_size(), rng);
    const auto bias = testing::random_values(2, rng);
    std::vector<double> want(g.output_size());
    for (std::size_t co = 0; co < 2; ++co)
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = bias[co];
                for (std::size_t t = 0; t < 3; ++t) {
                    const long col = static_cast<long>(j * 2 + t) - 1;
                    if (col >= 0 && col < 6) s += w[co * 3 + t] * x[h * 6 + static_cast<std::size_t>(col)];
                }
                want[(co * 2 + h) * 3 + j] = s;
            }
    std::vector<double> ref(g.output_size()), par(g.output_size());
    reference::conv2d_forward(g, x, w, bias, ref);
    parallel::conv2d_forward(g, x, w, bias, par);
    check_close(ref, want, 1e-14);
    check_close(par, want, 1e-14);
}

TEST_CASE("conv2d: identity kernel copies the input") {
    ConvGeometry g;
    g.in_h = 2;
    g.in_w = 128;
    std::mt19937_64 rng(1);
    const auto x = testing::random_values(g.input_size(), rng);
    const std::vector<double> w{1.0};
    std::vector<double> y(g.output_size());
    parallel::conv2d_forward(g, x, w, {}, y);
    CHECK(y == x);
}

TEST_CASE("conv2d: parallel forward and backward agree with the serial reference") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const ConvGeometry g = random_geometry(rng);
        CAPTURE(trial);
        const auto x = testing::random_values(g.input_size(), rng);
        const auto w = testing::random_values(g.weight_size(), rng);
        const auto bias = testing::random_values(g.out_channels, rng);
        const auto dy = testing::random_values(g.output_size(), rng);
        std::vector<double> y_ref(g.output_size()), y_par(g.output_size());
        reference::conv2d_forward(g, x, w, bias, y_ref);
        parallel::conv2d_forward(g, x, w, bias, y_par);
        check_close(y_par, y_ref, 1e-12);

        std::vector<double> dx_ref(x.size(), 0.5), dw_ref(w.size(), -0.25), db_ref(bias.size(), 1.0);
        auto dx_par = dx_ref, dw_par = dw_ref, db_par = db_ref;
        reference::conv2d_backward(g, x, w, dy, dx_ref, dw_ref, db_ref);
        parallel::conv2d_backward(g, x, w, dy, dx_par, dw_par, db_par);
        check_close(dx_par, dx_ref, 1e-12);
        check_close(dw_par, dw_ref, 1e-12);
        check_close(db_par, db_ref, 1e-12);
    }
}

TEST_CASE("conv2d: parallel results do not depend on the thread count") {
    std::mt19937_64 rng(99);
    ConvGeometry g;
    g.batch = 9;
    g.in_channels = 8;
    g.out_channels = 16;
    g.in_h = 2;
    g.in_w = 64;
    g.kernel_w = 5;
    g.stride_w = 2;
    g.pad_w = 2;
    const auto x = testing::random_values(g.input_size(), rng);
    const auto w = testing::random_values(g.weight_size(), rng);
    const auto dy = testing::random_values(g.output_size(), rng);
    auto run = [&](int threads) {
        omp_set_num_threads(threads);
        std::vector<double> y(g.output_size()), dx(x.size()), dw(w.size()), db(g.out_channels);
        parallel::conv2d_forward(g, x, w, {}, y);
        parallel::conv2d_backward(g, x, w, dy, dx, dw, db);
        y.insert(y.end(), dx.begin(), dx.end());
        y.insert(y.end(), dw.begin(), dw.end());
        y.insert(y.end(), db.begin(), db.end());
        return y;
    };
    const auto one = run(1);
    const auto three = run(3);
    const auto four = run(4);
    omp_set_num_threads(1);
    CHECK(one == three);
    CHECK(one == four);
}

TEST_CASE("conv geometry that cannot fit is rejected") {
    ConvGeometry g;
    g.in_w = 2;
    g.kernel_w = 5;
    CHECK_THROWS_AS(g.validate(), Error);
}
