#include "lrnet/ops.hpp"

#include <Eigen/Core>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

void require_matrix(const Tensor& t, const char* name) {
  if (t.rank() != 2) {
    throw DimensionError(std::string("gemm: ") + name + " must be a matrix, got " + shape_string(t.shape()));
  }
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, Real alpha, const Tensor& a, const Tensor& b, Real beta, Tensor& c) {
  require_matrix(a, "A");
  require_matrix(b, "B");
  require_matrix(c, "C");
  const bool ta = trans_a == Trans::Yes;
  const bool tb = trans_b == Trans::Yes;
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb || c.dim(0) != m || c.dim(1) != n) {
    throw DimensionError("gemm: incompatible shapes " + shape_string(a.shape()) + (ta ? "^T" : "") + " x " +
                         shape_string(b.shape()) + (tb ? "^T" : "") + " -> " + shape_string(c.shape()));
  }
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (Real& v : c.data()) v *= beta;
    return;
  }
  const ConstMap ma(a.ptr(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  const ConstMap mb(b.ptr(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  Map mc(c.ptr(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (beta == 0) {
    mc.setZero();
  } else if (beta != 1) {
    mc *= beta;
  }
  if (ta && tb) {
    mc.noalias() += alpha * ma.transpose() * mb.transpose();
  } else if (ta) {
    mc.noalias() += alpha * ma.transpose() * mb;
  } else if (tb) {
    mc.noalias() += alpha * ma * mb.transpose();
  } else {
    mc.noalias() += alpha * ma * mb;
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " do not agree");
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm(Trans::No, Trans::No, 1, a, b, 0, c);
  return c;
}

void ConvGeometry::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || stride == 0) {
    throw DimensionError("convolution kernel and stride must be positive");
  }
  if (kernel_h > height + 2 * pad || kernel_w > width + 2 * pad) {
    throw DimensionError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                         " larger than padded input " + std::to_string(height + 2 * pad) + "x" +
                         std::to_string(width + 2 * pad));
  }
}

Tensor im2col(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4) throw DimensionError("im2col expects [B, C, H, W], got " + shape_string(x.shape()));
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), kernel_h, kernel_w, stride, pad};
  g.validate();
  const std::size_t batch = x.dim(0);
  const std::size_t oh = g.out_h(), ow = g.out_w(), pixels = g.out_pixels();
  const std::size_t cols = batch * pixels;
  Tensor out({g.patch_size(), cols});
  Real* dst = out.ptr();
  const Real* src = x.ptr();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < kernel_w; ++kx) {
        Real* row = dst + ((c * kernel_h + ky) * kernel_w + kx) * cols;
        for (std::size_t b = 0; b < batch; ++b) {
          const Real* plane = src + (b * g.channels + c) * g.height * g.width;
          Real* out_b = row + b * pixels;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              const bool inside = iy >= 0 && iy < static_cast<long>(g.height) && ix >= 0 &&
                                  ix < static_cast<long>(g.width);
              out_b[oy * ow + ox] = inside ? plane[iy * g.width + ix] : Real(0);
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor col2im(const Tensor& cols, std::size_t batch, const ConvGeometry& g) {
  g.validate();
  const std::size_t oh = g.out_h(), ow = g.out_w(), pixels = g.out_pixels();
  if (cols.rank() != 2 || cols.dim(0) != g.patch_size() || cols.dim(1) != batch * pixels) {
    throw DimensionError("col2im: patch matrix " + shape_string(cols.shape()) + " does not match geometry " +
                         shape_string({g.patch_size(), batch * pixels}));
  }
  Tensor x({batch, g.channels, g.height, g.width});
  Real* dst = x.ptr();
  const std::size_t ncols = batch * pixels;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const Real* row = cols.ptr() + ((c * g.kernel_h + ky) * g.kernel_w + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          Real* plane = dst + (b * g.channels + c) * g.height * g.width;
          const Real* in_b = row + b * pixels;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
              plane[iy * g.width + ix] += in_b[oy * ow + ox];
            }
          }
        }
      }
    }
  }
  return x;
}

}  // namespace lrnet
