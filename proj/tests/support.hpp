#pragma once

// Reference implementations used as test oracles. Everything here is written
// the slow, obvious way and shares no code with the library beyond Tensor.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace oracle {

using lrnet::Real;
using lrnet::Shape;
using lrnet::Tensor;

inline Tensor random_tensor(Shape shape, lrnet::Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = static_cast<Real>(lo + (hi - lo) * rng.uniform());
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// c[i][j] = sum_k a[i][k] b[k][j]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<Real>(s);
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) t[j * a.dim(0) + i] = a[i * a.dim(1) + j];
  }
  return t;
}

// Direct convolution, x [B, C, H, W], w [O, C, kh, kw] -> [B, O, Ho, Wo].
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t pad = 0) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
  Tensor y({B, O, HO, WO});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < HO; ++oy)
        for (std::size_t ox = 0; ox < WO; ++ox) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += static_cast<double>(x.at({b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)})) *
                     w.at({o, c, ky, kx});
              }
          y.at({b, o, oy, ox}) = static_cast<Real>(s);
        }
  return y;
}

// Central differences of `loss` with respect to every entry of `param`.
inline std::vector<double> numeric_grad(Tensor& param, const std::function<double()>& loss, double h = 1e-6) {
  std::vector<double> g(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Real keep = param[i];
    param[i] = keep + static_cast<Real>(h);
    const double up = loss();
    param[i] = keep - static_cast<Real>(h);
    const double down = loss();
    param[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<double> as_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0 ? 0 : std::sqrt(diff) / denom;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lrnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path mnist_root() {
  const char* env = std::getenv("LRNET_DATA_DIR");
  return env ? env : "data";
}

}  // namespace oracle
