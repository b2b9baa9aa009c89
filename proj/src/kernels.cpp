#include "sohnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sohnet/error.hpp"

namespace sohnet::kernels {

void ConvGeometry::validate() const {
    if (batch == 0 || in_channels == 0 || out_channels == 0 || in_h == 0 || in_w == 0 ||
        kernel_h == 0 || kernel_w == 0 || stride_h == 0 || stride_w == 0)
        fail(ErrorKind::Shape, "conv2d: zero-sized dimension");
    if (in_h + 2 * pad_h < kernel_h || in_w + 2 * pad_w < kernel_w)
        fail(ErrorKind::Shape, "conv2d: kernel " + std::to_string(kernel_h) + "x" +
                                   std::to_string(kernel_w) + " larger than padded input " +
                                   std::to_string(in_h + 2 * pad_h) + "x" +
                                   std::to_string(in_w + 2 * pad_w));
}

namespace {

void check_sizes(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                 std::span<const double> bias) {
    g.validate();
    if (x.size() != g.input_size() || w.size() != g.weight_size() ||
        (!bias.empty() && bias.size() != g.out_channels))
        fail(ErrorKind::Shape, "conv2d: buffer sizes do not match geometry");
}

}  // namespace

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
    check_sizes(g, x, w, bias);
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oh = 0; oh < oh_n; ++oh)
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t i = 0; i < g.kernel_h; ++i)
                            for (std::size_t j = 0; j < g.kernel_w; ++j) {
                                const auto ih = static_cast<std::int64_t>(oh * g.stride_h + i) -
                                                static_cast<std::int64_t>(g.pad_h);
                                const auto iw = static_cast<std::int64_t>(ow * g.stride_w + j) -
                                                static_cast<std::int64_t>(g.pad_w);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::int64_t>(g.in_h) ||
                                    iw >= static_cast<std::int64_t>(g.in_w))
                                    continue;
                                acc += x[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] *
                                       w[((co * g.in_channels + ci) * g.kernel_h + i) * g.kernel_w + j];
                            }
                    y[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] = acc;
                }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy, std::span<double> dx,
                     std::span<double> dw, std::span<double> db) {
    check_sizes(g, x, w, {});
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oh = 0; oh < oh_n; ++oh)
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    const double go = dy[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow];
                    if (!db.empty()) db[co] += go;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t i = 0; i < g.kernel_h; ++i)
                            for (std::size_t j = 0; j < g.kernel_w; ++j) {
                                const auto ih = static_cast<std::int64_t>(oh * g.stride_h + i) -
                                                static_cast<std::int64_t>(g.pad_h);
                                const auto iw = static_cast<std::int64_t>(ow * g.stride_w + j) -
                                                static_cast<std::int64_t>(g.pad_w);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::int64_t>(g.in_h) ||
                                    iw >= static_cast<std::int64_t>(g.in_w))
                                    continue;
                                const std::size_t xi =
                                    ((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw;
                                const std::size_t wi =
                                    ((co * g.in_channels + ci) * g.kernel_h + i) * g.kernel_w + j;
                                if (!dx.empty()) dx[xi] += go * w[wi];
                                if (!dw.empty()) dw[wi] += go * x[xi];
                            }
                }
}

}  // namespace reference

namespace parallel {

namespace {
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 32;
}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c) {
    if (m == 0 || n == 0) return;
    const auto panels = static_cast<std::int64_t>((n + kColBlock - 1) / kColBlock);
#pragma omp parallel
    {
        std::vector<double> packed(k * kColBlock);
#pragma omp for schedule(static)
        for (std::int64_t jp = 0; jp < panels; ++jp) {
            const std::size_t j0 = static_cast<std::size_t>(jp) * kColBlock;
            const std::size_t nb = std::min(kColBlock, n - j0);
            for (std::size_t p = 0; p < k; ++p) {
                double* dst = &packed[p * kColBlock];
                const double* src = b + p * n + j0;
                std::size_t j = 0;
                for (; j < nb; ++j) dst[j] = src[j];
                for (; j < kColBlock; ++j) dst[j] = 0.0;
            }
            for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
                const std::size_t mb = std::min(kRowBlock, m - i0);
                double acc[kRowBlock][kColBlock] = {};
                if (mb == kRowBlock) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* bp = &packed[p * kColBlock];
                        for (std::size_t r = 0; r < kRowBlock; ++r) {
                            const double av = a[(i0 + r) * k + p];
                            for (std::size_t j = 0; j < kColBlock; ++j)
                                acc[r][j] = std::fma(av, bp[j], acc[r][j]);
                        }
                    }
                } else {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* bp = &packed[p * kColBlock];
                        for (std::size_t r = 0; r < mb; ++r) {
                            const double av = a[(i0 + r) * k + p];
                            for (std::size_t j = 0; j < kColBlock; ++j)
                                acc[r][j] = std::fma(av, bp[j], acc[r][j]);
                        }
                    }
                }
                for (std::size_t r = 0; r < mb; ++r)
                    std::copy_n(acc[r], nb, c + (i0 + r) * n + j0);
            }
        }
    }
}

namespace {
constexpr std::size_t kLanes = 8;

double fold_lanes(const double* l) {
    return ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
}
}  // namespace

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
    constexpr std::size_t rb = 4;
    const std::size_t kv = k - k % kLanes;
    const auto row_blocks = static_cast<std::int64_t>((m + rb - 1) / rb);
#pragma omp parallel for schedule(static)
    for (std::int64_t ib = 0; ib < row_blocks; ++ib) {
        const std::size_t i0 = static_cast<std::size_t>(ib) * rb;
        const std::size_t mb = std::min(rb, m - i0);
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc[rb][kLanes] = {};
            for (std::size_t p = 0; p < kv; p += kLanes)
                for (std::size_t r = 0; r < rb; ++r) {
                    const double* ar = a + (i0 + std::min(r, mb - 1)) * k + p;
                    for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] = std::fma(ar[l], bj[p + l], acc[r][l]);
                }
            for (std::size_t r = 0; r < mb; ++r) {
                const double* ar = a + (i0 + r) * k;
                for (std::size_t p = kv; p < k; ++p)
                    acc[r][p - kv] = std::fma(ar[p], bj[p], acc[r][p - kv]);
                c[(i0 + r) * n + j] = fold_lanes(acc[r]);
            }
        }
    }
}

void transpose(std::size_t m, std::size_t n, const double* src, double* dst) {
    constexpr std::size_t tile = 32;
    const auto row_tiles = static_cast<std::int64_t>((m + tile - 1) / tile);
#pragma omp parallel for schedule(static)
    for (std::int64_t it = 0; it < row_tiles; ++it) {
        const std::size_t i0 = static_cast<std::size_t>(it) * tile;
        const std::size_t i1 = std::min(m, i0 + tile);
        for (std::size_t j0 = 0; j0 < n; j0 += tile) {
            const std::size_t j1 = std::min(n, j0 + tile);
            for (std::size_t i = i0; i < i1; ++i)
                for (std::size_t j = j0; j < j1; ++j) dst[j * m + i] = src[i * n + j];
        }
    }
}

namespace {
// Output columns [lo, hi) whose input index ow·stride + j − pad lies inside [0, in).
struct Span1d {
    std::size_t lo, hi;
};
Span1d valid_outputs(std::size_t j, std::size_t stride, std::size_t pad, std::size_t in, std::size_t out) {
    const std::size_t lo = pad > j ? (pad - j + stride - 1) / stride : 0;
    if (in + pad <= j) return {0, 0};
    const std::size_t hi = std::min(out, (in - 1 + pad - j) / stride + 1);
    return {std::min(lo, hi), hi};
}
}  // namespace

namespace {

// The per-row bodies live outside the parallel regions and take the geometry
// by value; inside an outlined OpenMP region the compiler re-reads every
// captured field on each iteration of these short loops.

void im2col_row(const ConvGeometry g, const double* x, double* out, std::size_t r) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const std::size_t per_sample = oh_n * ow_n;
    const std::size_t sw = g.stride_w;
    const std::size_t ci = r / (g.kernel_h * g.kernel_w);
    const std::size_t i = (r / g.kernel_w) % g.kernel_h;
    const std::size_t j = r % g.kernel_w;
    const auto [lo, hi] = valid_outputs(j, sw, g.pad_w, g.in_w, ow_n);
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* plane = x + (n * g.in_channels + ci) * g.in_h * g.in_w;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
            const auto ih = static_cast<std::int64_t>(oh * g.stride_h + i) - static_cast<std::int64_t>(g.pad_h);
            double* dst = out + n * per_sample + oh * ow_n;
            if (ih < 0 || ih >= static_cast<std::int64_t>(g.in_h) || lo == hi) {
                for (std::size_t ow = 0; ow < ow_n; ++ow) dst[ow] = 0.0;
                continue;
            }
            // First valid tap; lo·sw + j ≥ pad by construction.
            const double* src = plane + static_cast<std::size_t>(ih) * g.in_w + (lo * sw + j - g.pad_w);
            for (std::size_t ow = 0; ow < lo; ++ow) dst[ow] = 0.0;
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[(ow - lo) * sw];
            for (std::size_t ow = hi; ow < ow_n; ++ow) dst[ow] = 0.0;
        }
    }
}

void col2im_plane(const ConvGeometry g, const double* cols, double* plane, std::size_t pl) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const std::size_t per_sample = oh_n * ow_n;
    const std::size_t ncols = g.batch * per_sample;
    const std::size_t sw = g.stride_w;
    const std::size_t n = pl / g.in_channels;
    const std::size_t ci = pl % g.in_channels;
    for (std::size_t i = 0; i < g.kernel_h; ++i)
        for (std::size_t j = 0; j < g.kernel_w; ++j) {
            const auto [lo, hi] = valid_outputs(j, sw, g.pad_w, g.in_w, ow_n);
            if (lo == hi) continue;
            const std::size_t r = (ci * g.kernel_h + i) * g.kernel_w + j;
            const double* src = cols + r * ncols + n * per_sample;
            for (std::size_t oh = 0; oh < oh_n; ++oh) {
                const auto ih = static_cast<std::int64_t>(oh * g.stride_h + i) - static_cast<std::int64_t>(g.pad_h);
                if (ih < 0 || ih >= static_cast<std::int64_t>(g.in_h)) continue;
                double* row = plane + static_cast<std::size_t>(ih) * g.in_w + (lo * sw + j - g.pad_w);
                const double* s = src + oh * ow_n;
                for (std::size_t ow = lo; ow < hi; ++ow) row[(ow - lo) * sw] += s[ow];
            }
        }
}

}  // namespace

void im2col(const ConvGeometry& g, std::span<const double> x, std::span<double> cols) {
    const std::size_t ncols = g.batch * g.out_h() * g.out_w();
    const auto rows = static_cast<std::int64_t>(g.patch_size());
    const ConvGeometry geo = g;
    const double* xp = x.data();
    double* cp = cols.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r)
        im2col_row(geo, xp, cp + static_cast<std::size_t>(r) * ncols, static_cast<std::size_t>(r));
}

void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> dx) {
    const auto planes = static_cast<std::int64_t>(g.batch * g.in_channels);
    const std::size_t plane_size = g.in_h * g.in_w;
    const ConvGeometry geo = g;
    const double* cp = cols.data();
    double* dp = dx.data();
    // Each (sample, channel) plane is owned by one iteration, so writes never race.
#pragma omp parallel for schedule(static)
    for (std::int64_t pl = 0; pl < planes; ++pl)
        col2im_plane(geo, cp, dp + static_cast<std::size_t>(pl) * plane_size, static_cast<std::size_t>(pl));
}

void conv2d_forward_cached(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> w, std::span<const double> bias,
                           std::span<double> y, std::span<double> cols) {
    check_sizes(g, x, w, bias);
    const std::size_t per_sample = g.out_h() * g.out_w();
    const std::size_t ncols = g.batch * per_sample;
    im2col(g, x, cols);
    std::vector<double> ymat(g.out_channels * ncols);
    gemm(g.out_channels, ncols, g.patch_size(), w.data(), cols.data(), ymat.data());
    const auto planes = static_cast<std::int64_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const std::size_t n = static_cast<std::size_t>(pl) / g.out_channels;
        const std::size_t co = static_cast<std::size_t>(pl) % g.out_channels;
        const double b = bias.empty() ? 0.0 : bias[co];
        const double* src = ymat.data() + co * ncols + n * per_sample;
        double* dst = y.data() + static_cast<std::size_t>(pl) * per_sample;
        for (std::size_t p = 0; p < per_sample; ++p) dst[p] = src[p] + b;
    }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
    std::vector<double> cols(g.patch_size() * g.batch * g.out_h() * g.out_w());
    conv2d_forward_cached(g, x, w, bias, y, cols);
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy, std::span<double> dx,
                     std::span<double> dw, std::span<double> db, std::span<const double> cols) {
    check_sizes(g, x, w, {});
    const std::size_t per_sample = g.out_h() * g.out_w();
    const std::size_t ncols = g.batch * per_sample;
    const std::size_t patch = g.patch_size();

    // dy as out_channels × (batch·per_sample)
    std::vector<double> dymat(g.out_channels * ncols);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            std::copy_n(dy.data() + (n * g.out_channels + co) * per_sample, per_sample,
                        dymat.data() + co * ncols + n * per_sample);

    if (!db.empty())
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            double acc = 0.0;
            for (std::size_t c = 0; c < ncols; ++c) acc += dymat[co * ncols + c];
            db[co] += acc;
        }

    std::vector<double> own_cols;
    if (!dw.empty() && cols.empty()) {
        own_cols.resize(patch * ncols);
        im2col(g, x, own_cols);
        cols = own_cols;
    }
    if (!dw.empty()) {
        std::vector<double> dw_tmp(g.out_channels * patch);
        gemm_nt(g.out_channels, patch, ncols, dymat.data(), cols.data(), dw_tmp.data());
        for (std::size_t i = 0; i < dw_tmp.size(); ++i) dw[i] += dw_tmp[i];
    }
    if (!dx.empty()) {
        std::vector<double> w_t(patch * g.out_channels);
        transpose(g.out_channels, patch, w.data(), w_t.data());
        std::vector<double> dcols(patch * ncols);
        gemm(patch, ncols, g.out_channels, w_t.data(), dymat.data(), dcols.data());
        col2im(g, dcols, dx);
    }
}

}  // namespace parallel

}  // namespace sohnet::kernels
