#pragma once

#include <cstddef>
#include <span>

// Compute kernels behind the autodiff ops. Every kernel exists twice:
// `reference` is a plain serial nested-loop version kept as the test oracle,
// `parallel` is the OpenMP/FMA version used by the engine. The parallel
// kernels reduce each output element in ascending index order with std::fma,
// so their results do not depend on thread count or batch composition.

namespace sohnet::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;

    std::size_t out_h() const { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
    std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
    std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
    std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
    std::size_t weight_size() const { return out_channels * patch_size(); }
    /// Throws ErrorKind::Shape when the kernel does not fit the padded input.
    void validate() const;
};

namespace reference {

/// c[m×n] = a[m×k] · b[k×n], row-major.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c);

/// Cross-correlation with zero padding; `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);

/// Accumulates (+=) into dx, dw and db; any of them may be empty to skip it.
void conv2d_backward(const ConvGeometry& g, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy, std::span<double> dx,
                     std::span<double> dw, std::span<double> db);

}  // namespace reference

namespace parallel {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c);

/// c[m×n] = a[m×k] · b[n×k]ᵀ for long reductions (weight gradients). Each
/// entry is accumulated in 8 interleaved lanes folded in a fixed order.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c);

/// dst[n×m] = src[m×n]ᵀ
void transpose(std::size_t m, std::size_t n, const double* src, double* dst);

/// Unfolds the input into a patch matrix of shape patch_size × (batch·out_h·out_w).
void im2col(const ConvGeometry& g, std::span<const double> x, std::span<double> cols);

/// Folds a patch-matrix gradient back, accumulating into dx.
void col2im(const ConvGeometry& g, std::span<const double> cols, std::span<double> dx);

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);

/// Forward pass that also returns the patch matrix for reuse in backward.
void conv2d_forward_cached(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> w, std::span<const double> bias,
                           std::span<double> y, std::span<double> cols);

/// Same contract as reference::conv2d_backward. `cols` must be the patch
/// matrix of x (from conv2d_forward_cached) or empty to recompute it.
void conv2d_backward(const ConvGeometry& g, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy, std::span<double> dx,
                     std::span<double> dw, std::span<double> db,
                     std::span<const double> cols = {});

}  // namespace parallel

}  // namespace sohnet::kernels
