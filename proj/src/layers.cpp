#include "lrnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

Tensor squared(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
  return out;
}

Rng& require_rng(ForwardContext& ctx, const char* who) {
  if (ctx.rng == nullptr) throw ProtocolError(std::string(who) + ": stochastic forward requires an rng");
  return *ctx.rng;
}

// log(sigmoid(x)) without overflow.
inline Real log_sigmoid(Real x) { return -(std::log1p(std::exp(-std::abs(x))) + std::max(-x, Real(0))); }

}  // namespace

void Layer::zero_grad() {
  for (auto& p : params()) p.grad->fill(0);
}

void WeightKernel::check_input(const Tensor& cols) const {
  if (cols.rank() != 2 || cols.dim(0) != in_features()) {
    throw DimensionError("weight kernel " + shape_string(shape_) + " expects columns of height " +
                         std::to_string(in_features()) + ", got " + shape_string(cols.shape()));
  }
}

// ---------------------------------------------------------------------------
// Full precision

FullPrecisionKernel::FullPrecisionKernel(Shape shape, Rng& init_rng, bool final_layer)
    : WeightKernel(shape), weight_(shape), grad_(shape), final_layer_(final_layer) {
  const Real scale = std::sqrt(Real(2) / static_cast<Real>(in_features()));
  init_rng.fill_normal(weight_.data());
  for (Real& w : weight_.data()) w *= scale;
}

Tensor FullPrecisionKernel::forward(const Tensor& cols, ForwardContext& ctx) {
  check_input(cols);
  const Tensor w = weight_.reshaped({out_features(), in_features()});
  Tensor z({out_features(), cols.dim(1)});
  gemm(Trans::No, Trans::No, 1, w, cols, 0, z);
  if (ctx.mode == Mode::Train) cols_ = cols;
  return z;
}

Tensor FullPrecisionKernel::backward(const Tensor& grad, bool want_input_grad) {
  if (!cols_) throw ProtocolError("full-precision kernel: backward without a cached training forward");
  Tensor gw({out_features(), in_features()});
  gemm(Trans::No, Trans::Yes, 1, grad, *cols_, 0, gw);
  for (std::size_t i = 0; i < gw.size(); ++i) grad_[i] += gw[i];
  Tensor dx;
  if (want_input_grad) {
    dx = Tensor({in_features(), grad.dim(1)});
    gemm(Trans::Yes, Trans::No, 1, weight_.reshaped({out_features(), in_features()}), grad, 0, dx);
  }
  cols_.reset();
  return dx;
}

std::vector<ParamRef> FullPrecisionKernel::params() {
  return {{"weight", &weight_, &grad_, final_layer_ ? ParamRole::FinalWeight : ParamRole::Weight}};
}

// ---------------------------------------------------------------------------
// Stochastic base

StochasticKernel::StochasticKernel(Shape shape, WeightDist dist) : WeightKernel(std::move(shape)) {
  set_dist(std::move(dist));
}

void StochasticKernel::set_dist(WeightDist dist) {
  if (shape_of(dist) != shape_) {
    throw DimensionError("distribution shape " + shape_string(shape_of(dist)) + " does not match kernel " +
                         shape_string(shape_));
  }
  dist_ = std::move(dist);
  grad_b_ = Tensor(shape_);
  grad_a_ = mode_of(dist_) == WeightMode::Ternary ? Tensor(shape_) : Tensor();
}

void StochasticKernel::set_inference_weights(Tensor weights) {
  if (weights.shape() != shape_) {
    throw DimensionError("inference weights " + shape_string(weights.shape()) + " do not match kernel " +
                         shape_string(shape_));
  }
  const bool ternary = mode_of(dist_) == WeightMode::Ternary;
  for (Real w : weights.data()) {
    if (!(w == Real(1) || w == Real(-1) || (ternary && w == Real(0)))) {
      throw ProtocolError("inference weight " + std::to_string(w) + " outside the discrete support");
    }
  }
  inference_weights_ = std::move(weights);
}

std::vector<ParamRef> StochasticKernel::params() {
  std::vector<ParamRef> out;
  if (auto* t = std::get_if<TernaryDist>(&dist_)) {
    out.push_back({"a", &t->a, &grad_a_, ParamRole::Logits});
    out.push_back({"b", &t->b, &grad_b_, ParamRole::Logits});
  } else {
    out.push_back({"b", &std::get<BinaryDist>(dist_).b, &grad_b_, ParamRole::Logits});
  }
  return out;
}

Tensor StochasticKernel::infer(const Tensor& cols) const {
  const Tensor w = (inference_weights_ ? *inference_weights_ : moments(dist_).mean)
                       .reshaped({out_features(), in_features()});
  Tensor z({out_features(), cols.dim(1)});
  gemm(Trans::No, Trans::No, 1, w, cols, 0, z);
  return z;
}

// ---------------------------------------------------------------------------
// Local reparameterization

Tensor LrKernel::forward(const Tensor& cols, ForwardContext& ctx) {
  check_input(cols);
  if (ctx.mode == Mode::Infer) return infer(cols);
  Rng& rng = require_rng(ctx, "lr kernel");
  const std::size_t out = out_features(), in = in_features(), n = cols.dim(1);

  Moments mom = moments(dist_);
  Tensor w_mean = mom.mean.reshaped({out, in});
  Tensor w_var = mom.var.reshaped({out, in});

  Tensor m({out, n});
  gemm(Trans::No, Trans::No, 1, w_mean, cols, 0, m);
  Tensor v2({out, n});
  gemm(Trans::No, Trans::No, 1, w_var, squared(cols), 0, v2);

  noise_ = sample_standard_normal(rng, {out, n});
  pre_std_ = Tensor({out, n});
  Tensor z({out, n});
  for (std::size_t i = 0; i < z.size(); ++i) {
    pre_std_[i] = std::sqrt(v2[i] + kVarianceFloor);
    z[i] = m[i] + pre_std_[i] * noise_[i];
  }
  pre_mean_ = std::move(m);
  if (ctx.mode == Mode::Train) {
    cache_ = Cache{cols, std::move(w_mean), std::move(w_var)};
  } else {
    cache_.reset();
  }
  return z;
}

Tensor LrKernel::backward(const Tensor& grad, bool want_input_grad) {
  if (!cache_) throw ProtocolError("lr kernel: backward without a cached training forward");
  if (grad.shape() != noise_.shape()) {
    throw DimensionError("lr kernel: upstream gradient " + shape_string(grad.shape()) + " vs pre-activations " +
                         shape_string(noise_.shape()));
  }
  const std::size_t out = out_features(), in = in_features(), n = grad.dim(1);
  const Tensor& cols = cache_->cols;

  // dL/dv^2 per pre-activation.
  Tensor grad_v2({out, n});
  for (std::size_t i = 0; i < grad_v2.size(); ++i) grad_v2[i] = grad[i] * noise_[i] / (Real(2) * pre_std_[i]);

  Tensor grad_mean({out, in});
  gemm(Trans::No, Trans::Yes, 1, grad, cols, 0, grad_mean);
  const Tensor cols_sq = squared(cols);
  Tensor grad_var({out, in});
  gemm(Trans::No, Trans::Yes, 1, grad_v2, cols_sq, 0, grad_var);
  grad_mean.reshape(shape_);
  grad_var.reshape(shape_);
  accumulate_logit_grads(dist_, grad_mean, grad_var, grad_a_, grad_b_);

  Tensor dx;
  if (want_input_grad) {
    dx = Tensor({in, n});
    gemm(Trans::Yes, Trans::No, 1, cache_->mean, grad, 0, dx);
    Tensor var_term({in, n});
    gemm(Trans::Yes, Trans::No, 1, cache_->var, grad_v2, 0, var_term);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += Real(2) * cols[i] * var_term[i];
  }
  cache_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Gumbel-softmax

GumbelKernel::GumbelKernel(Shape shape, WeightDist dist, Real tau)
    : StochasticKernel(std::move(shape), std::move(dist)), tau_(tau) {
  if (!(tau > 0)) throw ConfigError("gumbel temperature must be positive");
}

GumbelKernel::Relaxation GumbelKernel::relax(Rng& rng) const {
  const std::size_t count = shape_size(shape_);
  const bool ternary = mode_of(dist_) == WeightMode::Ternary;
  const std::size_t classes = ternary ? 3 : 2;
  Tensor u({count * classes});
  rng.fill_uniform(u.data());

  Relaxation r{Tensor({out_features(), in_features()}), std::vector<std::array<Real, 3>>(count)};
  constexpr Real kValues[3] = {-1, 0, 1};
  const Tensor& b = std::visit([](const auto& d) -> const Tensor& { return d.b; }, dist_);
  const Tensor* a = ternary ? &std::get<TernaryDist>(dist_).a : nullptr;
  for (std::size_t i = 0; i < count; ++i) {
    std::array<Real, 3> logp;
    if (ternary) {
      const Real log_nonzero = log_sigmoid(-(*a)[i]);
      logp = {log_nonzero + log_sigmoid(-b[i]), log_sigmoid((*a)[i]), log_nonzero + log_sigmoid(b[i])};
    } else {
      logp = {log_sigmoid(-b[i]), -std::numeric_limits<Real>::infinity(), log_sigmoid(b[i])};
    }
    std::array<Real, 3> y;
    Real y_max = -std::numeric_limits<Real>::infinity();
    for (std::size_t k = 0, draw = 0; k < 3; ++k) {
      if (!ternary && k == 1) {
        y[k] = -std::numeric_limits<Real>::infinity();
        continue;
      }
      const Real gumbel = -std::log(-std::log(u[i * classes + draw++]));
      y[k] = (logp[k] + gumbel) / tau_;
      y_max = std::max(y_max, y[k]);
    }
    Real total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      y[k] = std::isinf(y[k]) ? Real(0) : std::exp(y[k] - y_max);
      total += y[k];
    }
    Real w = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      r.soft[i][k] = y[k] / total;
      w += kValues[k] * r.soft[i][k];
    }
    r.weights[i] = w;
  }
  return r;
}

Tensor GumbelKernel::forward(const Tensor& cols, ForwardContext& ctx) {
  check_input(cols);
  if (ctx.mode == Mode::Infer) return infer(cols);
  Relaxation relaxation = relax(require_rng(ctx, "gumbel kernel"));
  Tensor z({out_features(), cols.dim(1)});
  gemm(Trans::No, Trans::No, 1, relaxation.weights, cols, 0, z);
  relaxed_ = relaxation.weights.reshaped(shape_);
  if (ctx.mode == Mode::Train) {
    cache_ = Cache{cols, std::move(relaxation)};
  } else {
    cache_.reset();
  }
  return z;
}

Tensor GumbelKernel::backward(const Tensor& grad, bool want_input_grad) {
  if (!cache_) throw ProtocolError("gumbel kernel: backward without a cached training forward");
  const std::size_t out = out_features(), in = in_features();
  const Relaxation& rel = cache_->relaxation;
  Tensor grad_w({out, in});
  gemm(Trans::No, Trans::Yes, 1, grad, cache_->cols, 0, grad_w);

  constexpr Real kValues[3] = {-1, 0, 1};
  const bool ternary = mode_of(dist_) == WeightMode::Ternary;
  const Tensor& b = std::visit([](const auto& d) -> const Tensor& { return d.b; }, dist_);
  for (std::size_t i = 0; i < grad_w.size(); ++i) {
    // d w / d log p_k = s_k (value_k - w) / tau
    std::array<Real, 3> dlogp;
    for (std::size_t k = 0; k < 3; ++k) dlogp[k] = grad_w[i] * rel.soft[i][k] * (kValues[k] - rel.weights[i]) / tau_;
    const Real sb = sigmoid(b[i]);
    if (ternary) {
      const Real sa = sigmoid(std::get<TernaryDist>(dist_).a[i]);
      grad_a_[i] += -(dlogp[0] + dlogp[2]) * sa + dlogp[1] * (Real(1) - sa);
    }
    grad_b_[i] += -dlogp[0] * sb + dlogp[2] * (Real(1) - sb);
  }

  Tensor dx;
  if (want_input_grad) {
    dx = Tensor({in, grad.dim(1)});
    gemm(Trans::Yes, Trans::No, 1, rel.weights, grad, 0, dx);
  }
  cache_.reset();
  return dx;
}

// ---------------------------------------------------------------------------
// Dense / conv wrappers

DenseLayer::DenseLayer(std::unique_ptr<WeightKernel> kernel, bool with_bias)
    : kernel_(std::move(kernel)), with_bias_(with_bias) {
  if (kernel_->weight_shape().size() != 2) {
    throw DimensionError("dense layer needs a [out, in] kernel, got " + shape_string(kernel_->weight_shape()));
  }
  if (with_bias_) {
    bias_ = Tensor({kernel_->out_features()});
    bias_grad_ = Tensor({kernel_->out_features()});
  }
}

Tensor DenseLayer::forward(const Tensor& x, ForwardContext& ctx) {
  if (x.rank() != 2 || x.dim(1) != kernel_->in_features()) {
    throw DimensionError("dense layer expects [B, " + std::to_string(kernel_->in_features()) + "], got " +
                         shape_string(x.shape()));
  }
  Tensor y = transpose2d(kernel_->forward(transpose2d(x), ctx));
  if (with_bias_) {
    const std::size_t out = kernel_->out_features();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias_[i % out];
  }
  return y;
}

Tensor DenseLayer::backward(const Tensor& grad_out) {
  const std::size_t out = kernel_->out_features();
  if (grad_out.rank() != 2 || grad_out.dim(1) != out) {
    throw DimensionError("dense layer: gradient " + shape_string(grad_out.shape()) + " does not match output width " +
                         std::to_string(out));
  }
  if (with_bias_) {
    for (std::size_t i = 0; i < grad_out.size(); ++i) bias_grad_[i % out] += grad_out[i];
  }
  Tensor dx = kernel_->backward(transpose2d(grad_out), propagate_input_grad_);
  return dx.empty() ? dx : transpose2d(dx);
}

std::vector<ParamRef> DenseLayer::params() {
  auto out = kernel_->params();
  if (with_bias_) out.push_back({"bias", &bias_, &bias_grad_, ParamRole::Bias});
  return out;
}

ConvLayer::ConvLayer(std::unique_ptr<WeightKernel> kernel, ConvGeometry geometry)
    : kernel_(std::move(kernel)), geom_(geometry) {
  geom_.validate();
  const Shape& s = kernel_->weight_shape();
  if (s.size() != 4 || s[1] != geom_.channels || s[2] != geom_.kernel_h || s[3] != geom_.kernel_w) {
    throw DimensionError("conv kernel " + shape_string(s) + " does not match geometry");
  }
}

Tensor ConvLayer::forward(const Tensor& x, ForwardContext& ctx) {
  if (x.rank() != 4 || x.dim(1) != geom_.channels || x.dim(2) != geom_.height || x.dim(3) != geom_.width) {
    throw DimensionError("conv layer expects [B, " + std::to_string(geom_.channels) + ", " +
                         std::to_string(geom_.height) + ", " + std::to_string(geom_.width) + "], got " +
                         shape_string(x.shape()));
  }
  batch_ = x.dim(0);
  const Tensor z = kernel_->forward(im2col(x, geom_.kernel_h, geom_.kernel_w, geom_.stride, geom_.pad), ctx);
  const std::size_t c_out = kernel_->out_features(), pixels = geom_.out_pixels();
  Tensor y({batch_, c_out, geom_.out_h(), geom_.out_w()});
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(z.ptr() + c * batch_ * pixels + b * pixels, pixels, y.ptr() + (b * c_out + c) * pixels);
    }
  }
  return y;
}

Tensor ConvLayer::backward(const Tensor& grad_out) {
  const std::size_t c_out = kernel_->out_features(), pixels = geom_.out_pixels();
  if (grad_out.size() != batch_ * c_out * pixels) {
    throw DimensionError("conv layer: gradient " + shape_string(grad_out.shape()) + " does not match output");
  }
  Tensor g({c_out, batch_ * pixels});
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(grad_out.ptr() + (b * c_out + c) * pixels, pixels, g.ptr() + c * batch_ * pixels + b * pixels);
    }
  }
  Tensor dcols = kernel_->backward(g, propagate_input_grad_);
  return dcols.empty() ? dcols : col2im(dcols, batch_, geom_);
}

// ---------------------------------------------------------------------------
// Plumbing layers

Tensor ReluLayer::forward(const Tensor& x, ForwardContext& ctx) {
  Tensor y(x.shape());
  // Written so NaN passes through and divergence stays visible downstream.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < 0 ? Real(0) : x[i];
  if (ctx.mode == Mode::Train) {
    input_ = x;
  } else {
    input_.reset();
  }
  return y;
}

Tensor ReluLayer::backward(const Tensor& grad_out) {
  if (!input_) throw ProtocolError("relu: backward without a cached training forward");
  require_same_shape(*input_, grad_out, "relu backward");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*input_)[i] > 0 ? grad_out[i] : Real(0);
  input_.reset();
  return dx;
}

Tensor MaxPool2Layer::forward(const Tensor& x, ForwardContext& ctx) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw DimensionError("maxpool2 expects [B, C, H>=2, W>=2], got " + shape_string(x.shape()));
  }
  input_shape_ = x.shape();
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = x.ptr() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best] || std::isnan(src[idx])) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  if (ctx.mode == Mode::Train) {
    argmax_ = std::move(argmax);
  } else {
    argmax_.reset();
  }
  return y;
}

Tensor MaxPool2Layer::backward(const Tensor& grad_out) {
  if (!argmax_) throw ProtocolError("maxpool2: backward without a cached training forward");
  if (grad_out.size() != argmax_->size()) throw DimensionError("maxpool2: gradient size mismatch");
  Tensor dx(input_shape_);
  for (std::size_t i = 0; i < grad_out.size(); ++i) dx[(*argmax_)[i]] += grad_out[i];
  argmax_.reset();
  return dx;
}

BatchNormLayer::BatchNormLayer(std::size_t channels, Real momentum, Real eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}, Real(1)),
      beta_({channels}),
      gamma_grad_({channels}),
      beta_grad_({channels}),
      running_mean_({channels}),
      running_var_({channels}, Real(1)) {
  if (!(momentum >= 0 && momentum < 1) || !(eps > 0)) throw ConfigError("batchnorm needs momentum in [0,1), eps > 0");
}

Tensor BatchNormLayer::forward(const Tensor& x, ForwardContext& ctx) {
  if ((x.rank() != 4 && x.rank() != 2) || x.dim(1) != channels_) {
    throw DimensionError("batchnorm over " + std::to_string(channels_) + " channels got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t count = batch * spatial;
  Tensor y(x.shape());

  auto for_each_channel = [&](std::size_t c, auto&& f) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) f(base + s);
    }
  };

  if (ctx.mode != Mode::Train) {
    cache_.reset();
    for (std::size_t c = 0; c < channels_; ++c) {
      const Real inv = Real(1) / std::sqrt(running_var_[c] + eps_);
      for_each_channel(c, [&](std::size_t i) { y[i] = gamma_[c] * (x[i] - running_mean_[c]) * inv + beta_[c]; });
    }
    return y;
  }

  Cache cache{Tensor(x.shape()), std::vector<Real>(channels_)};
  for (std::size_t c = 0; c < channels_; ++c) {
    Real mu = 0;
    for_each_channel(c, [&](std::size_t i) { mu += x[i]; });
    mu /= static_cast<Real>(count);
    Real var = 0;
    for_each_channel(c, [&](std::size_t i) { var += (x[i] - mu) * (x[i] - mu); });
    var /= static_cast<Real>(count);
    const Real inv = Real(1) / std::sqrt(var + eps_);
    cache.inv_std[c] = inv;
    for_each_channel(c, [&](std::size_t i) {
      cache.normalized[i] = (x[i] - mu) * inv;
      y[i] = gamma_[c] * cache.normalized[i] + beta_[c];
    });
    const Real unbiased = count > 1 ? var * static_cast<Real>(count) / static_cast<Real>(count - 1) : var;
    running_mean_[c] = momentum_ * running_mean_[c] + (Real(1) - momentum_) * mu;
    running_var_[c] = momentum_ * running_var_[c] + (Real(1) - momentum_) * unbiased;
  }
  cache_ = std::move(cache);
  return y;
}

Tensor BatchNormLayer::backward(const Tensor& grad_out) {
  if (!cache_) throw ProtocolError("batchnorm: backward without a cached training forward");
  require_same_shape(cache_->normalized, grad_out, "batchnorm backward");
  const Tensor& xhat = cache_->normalized;
  const std::size_t batch = grad_out.dim(0);
  const std::size_t spatial = grad_out.rank() == 4 ? grad_out.dim(2) * grad_out.dim(3) : 1;
  const Real count = static_cast<Real>(batch * spatial);
  Tensor dx(grad_out.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    Real sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        sum_dy += grad_out[base + s];
        sum_dy_xhat += grad_out[base + s] * xhat[base + s];
      }
    }
    gamma_grad_[c] += sum_dy_xhat;
    beta_grad_[c] += sum_dy;
    const Real scale = gamma_[c] * cache_->inv_std[c] / count;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = base + s;
        dx[i] = scale * (count * grad_out[i] - sum_dy - xhat[i] * sum_dy_xhat);
      }
    }
  }
  cache_.reset();
  return dx;
}

std::vector<ParamRef> BatchNormLayer::params() {
  return {{"gamma", &gamma_, &gamma_grad_, ParamRole::Norm}, {"beta", &beta_, &beta_grad_, ParamRole::Norm}};
}

std::vector<BufferRef> BatchNormLayer::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

DropoutLayer::DropoutLayer(Real rate) : rate_(rate) {
  if (!(rate >= 0 && rate < 1)) throw ConfigError("dropout rate must lie in [0, 1)");
}

Tensor DropoutLayer::forward(const Tensor& x, ForwardContext& ctx) {
  if (ctx.mode != Mode::Train || rate_ == 0) {
    mask_ = ctx.mode == Mode::Train ? std::optional<Tensor>(Tensor(x.shape(), Real(1))) : std::nullopt;
    return x;
  }
  Tensor mask(x.shape());
  require_rng(ctx, "dropout").fill_uniform(mask.data());
  const Real keep_scale = Real(1) / (Real(1) - rate_);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = mask[i] >= rate_ ? keep_scale : Real(0);
    y[i] = x[i] * mask[i];
  }
  mask_ = std::move(mask);
  return y;
}

Tensor DropoutLayer::backward(const Tensor& grad_out) {
  if (!mask_) throw ProtocolError("dropout: backward without a cached training forward");
  require_same_shape(*mask_, grad_out, "dropout backward");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * (*mask_)[i];
  mask_.reset();
  return dx;
}

Tensor FlattenLayer::forward(const Tensor& x, ForwardContext&) {
  if (x.rank() < 1) throw DimensionError("flatten needs a batch dimension");
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
}

Tensor FlattenLayer::backward(const Tensor& grad_out) { return grad_out.reshaped(input_shape_); }

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw DimensionError("softmax_xent: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult out{0, Tensor(logits.shape())};
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw DimensionError("softmax_xent: label " + std::to_string(labels[b]) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
    const Real* row = logits.ptr() + b * classes;
    const Real top = *std::max_element(row, row + classes);
    Real total = 0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(row[k] - top);
    const Real log_total = std::log(total) + top;
    out.loss += log_total - row[labels[b]];
    for (std::size_t k = 0; k < classes; ++k) {
      const Real p = std::exp(row[k] - log_total);
      out.grad[b * classes + k] = (p - (static_cast<int>(k) == labels[b] ? Real(1) : Real(0))) / batch;
    }
  }
  out.loss /= static_cast<Real>(batch);
  return out;
}

}  // namespace lrnet
