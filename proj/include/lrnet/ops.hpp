#pragma once

#include <cstddef>

#include "lrnet/tensor.hpp"

namespace lrnet {

enum class Trans { No, Yes };

/// C = alpha * op(A) * op(B) + beta * C on row-major matrices. `c` must
/// already have the result shape. Backed by BLAS.
void gemm(Trans trans_a, Trans trans_b, Real alpha, const Tensor& a, const Tensor& b, Real beta, Tensor& c);

/// Plain matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Spatial layout of a 2-D convolution over NCHW input.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t out_pixels() const { return out_h() * out_w(); }

  /// Throws DimensionError when the kernel does not fit the padded input.
  void validate() const;
};

/// Patch matrix of shape [C*kh*kw, B*Ho*Wo]; column (b, oy, ox) holds the
/// zero-padded receptive field of that output pixel, rows ordered (c, ky, kx).
/// Convolution is then matmul(weights [Cout, C*kh*kw], patches).
Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride, std::size_t pad);

/// Adjoint of im2col: scatters (sums) patch gradients back onto a [B, C, H, W] tensor.
Tensor col2im(const Tensor& cols, std::size_t batch, const ConvGeometry& geom);

}  // namespace lrnet
