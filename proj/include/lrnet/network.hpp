#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "lrnet/dist.hpp"
#include "lrnet/layers.hpp"

namespace lrnet {

enum class WeightScheme { FullPrecision, LocalReparam, Gumbel };

std::string to_string(WeightScheme scheme);
WeightScheme parse_weight_scheme(const std::string& text);

struct ConvSpec {
  std::size_t channels = 0;
  std::size_t kernel = 5;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Architecture: [conv -> batchnorm -> relu -> maxpool2] per conv spec, then
/// flatten -> dropout -> fc(fc_width) -> relu -> full-precision dense(num_classes).
/// Every conv and the hidden fc use `scheme`; the output layer is always full precision.
struct NetworkConfig {
  std::array<std::size_t, 3> input{1, 28, 28};
  std::vector<ConvSpec> conv;
  std::size_t fc_width = 128;
  std::size_t num_classes = 10;
  Real dropout = Real(0.5);
  Real bn_momentum = Real(0.9);
  Real bn_eps = Real(1e-5);
  WeightScheme scheme = WeightScheme::LocalReparam;
  WeightMode mode = WeightMode::Ternary;
  Real gumbel_tau = Real(0.1);

  void validate() const;

  /// 8C5-MP2-16C5-MP2-128FC, the reduced MNIST network.
  static NetworkConfig desk_mnist();
  /// 32C5-MP2-64C5-MP2-512FC.
  static NetworkConfig full_mnist();

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct StochasticLayerRef {
  std::size_t layer_index;
  StochasticKernel* kernel;
};

class Network {
 public:
  Network(NetworkConfig cfg, Rng& init_rng);

  const NetworkConfig& config() const noexcept { return cfg_; }
  /// Canonical description of the layout, stored in checkpoints.
  std::string topology() const;

  Tensor forward(const Tensor& x, ForwardContext& ctx);
  Tensor backward(const Tensor& grad_logits);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  /// Parameters with names of the form "<index>.<kind>.<name>".
  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  void zero_grad();

  std::vector<StochasticLayerRef> stochastic_layers();
  DenseLayer& output_layer();

  /// Index of the first layer whose last forward output was non-finite, or
  /// layer_count() when all were finite.
  std::size_t first_nonfinite_layer() const noexcept { return first_nonfinite_; }

  /// Installs one weight tensor per stochastic layer for Infer mode.
  void set_inference_weights(const std::vector<Tensor>& weights);
  void clear_inference_weights();

 private:
  NetworkConfig cfg_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t first_nonfinite_ = 0;
  std::size_t output_index_ = 0;
};

/// Copies a trained full-precision network into a stochastic one of the same
/// layout: each weight layer is normalized by its standard deviation and
/// converted with init_from_pretrained; batch-norm parameters are copied with
/// running statistics rescaled, and the output layer is rescaled by the hidden
/// fc layer's standard deviation so the mean network computes the same function
/// wherever no probability was clipped.
void initialize_from_pretrained(Network& target, Network& pretrained, Real p_min, Real p_max);

Tensor weight_of(const WeightKernel& kernel);

}  // namespace lrnet
