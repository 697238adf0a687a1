#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrnet/dist.hpp"
#include "lrnet/ops.hpp"
#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace lrnet {

/// Train: stochastic, caches for backward, batch-norm batch statistics.
/// Diagnose: stochastic, no caching, running statistics.
/// Infer: deterministic (mean or fixed sampled weights), running statistics.
enum class Mode { Train, Diagnose, Infer };

struct ForwardContext {
  Mode mode = Mode::Infer;
  Rng* rng = nullptr;
};

enum class ParamRole { Logits, Weight, FinalWeight, Bias, Norm };

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
  ParamRole role;
};

struct BufferRef {
  std::string name;
  Tensor* value;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, ForwardContext& ctx) = 0;
  /// Accumulates parameter gradients and returns dL/dx (empty when input
  /// gradients are switched off for this layer).
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::vector<BufferRef> buffers() { return {}; }

  void zero_grad();

  void set_propagate_input_grad(bool on) noexcept { propagate_input_grad_ = on; }
  bool propagate_input_grad() const noexcept { return propagate_input_grad_; }

 protected:
  bool propagate_input_grad_ = true;
};

/// A weight matrix [out, in] applied to column matrices [in, N] -> [out, N].
/// Dense and convolution layers both reduce to this after reshaping.
class WeightKernel {
 public:
  virtual ~WeightKernel() = default;

  virtual std::string scheme() const = 0;
  virtual Tensor forward(const Tensor& cols, ForwardContext& ctx) = 0;
  virtual Tensor backward(const Tensor& grad, bool want_input_grad) = 0;
  virtual std::vector<ParamRef> params() = 0;

  /// Full weight shape, e.g. [out, in] or [c_out, c_in, kh, kw].
  const Shape& weight_shape() const noexcept { return shape_; }
  std::size_t out_features() const noexcept { return shape_[0]; }
  std::size_t in_features() const noexcept { return shape_size(shape_) / shape_[0]; }

 protected:
  explicit WeightKernel(Shape shape) : shape_(std::move(shape)) {}
  void check_input(const Tensor& cols) const;

  Shape shape_;
};

/// Ordinary real-valued weights.
class FullPrecisionKernel : public WeightKernel {
 public:
  FullPrecisionKernel(Shape shape, Rng& init_rng, bool final_layer = false);

  std::string scheme() const override { return "full"; }
  Tensor forward(const Tensor& cols, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad, bool want_input_grad) override;
  std::vector<ParamRef> params() override;

  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }

 private:
  Tensor weight_;
  Tensor grad_;
  bool final_layer_;
  std::optional<Tensor> cols_;
};

/// Weights governed by per-weight discrete distributions. In Infer mode the
/// kernel applies fixed inference weights when set, otherwise the means.
class StochasticKernel : public WeightKernel {
 public:
  StochasticKernel(Shape shape, WeightDist dist);

  const WeightDist& dist() const noexcept { return dist_; }
  WeightDist& dist() noexcept { return dist_; }
  void set_dist(WeightDist dist);

  const Tensor& grad_a() const noexcept { return grad_a_; }
  const Tensor& grad_b() const noexcept { return grad_b_; }

  /// Installs discrete weights for Infer mode; every entry must lie in the
  /// distribution's support {-1, 0, +1} (or {-1, +1}).
  void set_inference_weights(Tensor weights);
  void clear_inference_weights() noexcept { inference_weights_.reset(); }
  const std::optional<Tensor>& inference_weights() const noexcept { return inference_weights_; }

  std::vector<ParamRef> params() override;

 protected:
  Tensor infer(const Tensor& cols) const;

  WeightDist dist_;
  Tensor grad_a_;
  Tensor grad_b_;
  std::optional<Tensor> inference_weights_;
};

/// Variance floor added under the square root of the pre-activation variance.
inline constexpr Real kVarianceFloor = Real(1e-10);

/// Local reparameterization: samples pre-activations z = m + v * eps with
/// m = mu h and v^2 = sigma^2 h^2, one eps per (output unit, column).
class LrKernel : public StochasticKernel {
 public:
  using StochasticKernel::StochasticKernel;

  std::string scheme() const override { return "lr"; }
  Tensor forward(const Tensor& cols, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad, bool want_input_grad) override;

  /// Noise realization of the last Train or Diagnose forward, [out, N].
  const Tensor& last_noise() const noexcept { return noise_; }
  /// Mean and standard deviation of the pre-activations from the last stochastic forward.
  const Tensor& last_mean() const noexcept { return pre_mean_; }
  const Tensor& last_std() const noexcept { return pre_std_; }

 private:
  Tensor noise_;
  Tensor pre_mean_;
  Tensor pre_std_;
  struct Cache {
    Tensor cols;
    Tensor mean;  // weight means [out, in]
    Tensor var;   // weight variances [out, in]
  };
  std::optional<Cache> cache_;
};

/// Gumbel-softmax relaxation: one relaxed weight per entry per forward,
/// w = sum_k value_k softmax_k((log p_k + g_k) / tau).
class GumbelKernel : public StochasticKernel {
 public:
  GumbelKernel(Shape shape, WeightDist dist, Real tau);

  std::string scheme() const override { return "gumbel"; }
  Real tau() const noexcept { return tau_; }
  Tensor forward(const Tensor& cols, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad, bool want_input_grad) override;

  /// Relaxed weights of the last stochastic forward.
  const Tensor& last_relaxed() const noexcept { return relaxed_; }

 private:
  struct Relaxation {
    Tensor weights;                       // [out, in]
    std::vector<std::array<Real, 3>> soft;  // softmax per weight over (-1, 0, +1)
  };
  Relaxation relax(Rng& rng) const;

  Real tau_;
  Tensor relaxed_;
  struct Cache {
    Tensor cols;
    Relaxation relaxation;
  };
  std::optional<Cache> cache_;
};

/// Fully connected layer over [B, in] input.
class DenseLayer : public Layer {
 public:
  DenseLayer(std::unique_ptr<WeightKernel> kernel, bool with_bias);

  std::string kind() const override { return "dense"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;

  WeightKernel& kernel() noexcept { return *kernel_; }
  const WeightKernel& kernel() const noexcept { return *kernel_; }
  Tensor& bias() noexcept { return bias_; }

 private:
  std::unique_ptr<WeightKernel> kernel_;
  bool with_bias_;
  Tensor bias_;
  Tensor bias_grad_;
};

/// 2-D convolution over [B, C, H, W] input via im2col.
class ConvLayer : public Layer {
 public:
  ConvLayer(std::unique_ptr<WeightKernel> kernel, ConvGeometry geometry);

  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override { return kernel_->params(); }

  WeightKernel& kernel() noexcept { return *kernel_; }
  const WeightKernel& kernel() const noexcept { return *kernel_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }

 private:
  std::unique_ptr<WeightKernel> kernel_;
  ConvGeometry geom_;
  std::size_t batch_ = 0;
};

class ReluLayer : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::optional<Tensor> input_;
};

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
class MaxPool2Layer : public Layer {
 public:
  std::string kind() const override { return "maxpool2"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
  std::optional<std::vector<std::size_t>> argmax_;
};

/// Per-channel batch normalization for [B, C, H, W] or [B, C] input.
class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(std::size_t channels, Real momentum, Real eps);

  std::string kind() const override { return "batchnorm"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<BufferRef> buffers() override;

  Tensor& gamma() noexcept { return gamma_; }
  Tensor& beta() noexcept { return beta_; }
  Tensor& running_mean() noexcept { return running_mean_; }
  Tensor& running_var() noexcept { return running_var_; }

 private:
  std::size_t channels_;
  Real momentum_;
  Real eps_;
  Tensor gamma_, beta_, gamma_grad_, beta_grad_;
  Tensor running_mean_, running_var_;
  struct Cache {
    Tensor normalized;
    std::vector<Real> inv_std;
  };
  std::optional<Cache> cache_;
};

/// Inverted dropout; identity outside Train mode.
class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(Real rate);

  std::string kind() const override { return "dropout"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Real rate_;
  std::optional<Tensor> mask_;
};

class FlattenLayer : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

struct LossResult {
  Real loss = 0;  // mean over the batch
  Tensor grad;    // dL/dlogits
};

/// Mean softmax cross-entropy of logits [B, classes] against integer labels.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace lrnet
