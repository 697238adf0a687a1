#include "lrnet/network.hpp"

#include "lrnet/config.hpp"
#include "lrnet/errors.hpp"

namespace lrnet {

std::string to_string(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::FullPrecision:
      return "full";
    case WeightScheme::LocalReparam:
      return "lr";
    case WeightScheme::Gumbel:
      return "gumbel";
  }
  return "?";
}

WeightScheme parse_weight_scheme(const std::string& text) {
  if (text == "full") return WeightScheme::FullPrecision;
  if (text == "lr") return WeightScheme::LocalReparam;
  if (text == "gumbel") return WeightScheme::Gumbel;
  throw ConfigError("weight scheme must be 'full', 'lr' or 'gumbel', got '" + text + "'");
}

void NetworkConfig::validate() const {
  if (input[0] == 0 || input[1] == 0 || input[2] == 0) throw ConfigError("network.input dimensions must be positive");
  if (fc_width == 0) throw ConfigError("network.fc_width must be positive");
  if (num_classes < 2) throw ConfigError("network.num_classes must be at least 2");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("network.dropout must lie in [0, 1)");
  if (!(bn_momentum >= 0 && bn_momentum < 1)) throw ConfigError("network.bn_momentum must lie in [0, 1)");
  if (!(bn_eps > 0)) throw ConfigError("network.bn_eps must be positive");
  if (!(gumbel_tau > 0)) throw ConfigError("network.gumbel_tau must be positive");
  std::size_t h = input[1], w = input[2];
  for (const auto& c : conv) {
    if (c.channels == 0 || c.kernel == 0) throw ConfigError("network.conv entries need positive channels and kernel");
    if (c.kernel > h || c.kernel > w) throw ConfigError("network.conv kernel larger than its input");
    h = (h - c.kernel + 1) / 2;
    w = (w - c.kernel + 1) / 2;
    if (h == 0 || w == 0) throw ConfigError("network.conv stack pools the input away to nothing");
  }
}

NetworkConfig NetworkConfig::desk_mnist() {
  NetworkConfig cfg;
  cfg.conv = {{8, 5}, {16, 5}};
  cfg.fc_width = 128;
  return cfg;
}

NetworkConfig NetworkConfig::full_mnist() {
  NetworkConfig cfg;
  cfg.conv = {{32, 5}, {64, 5}};
  cfg.fc_width = 512;
  return cfg;
}

namespace {

std::unique_ptr<WeightKernel> make_kernel(const NetworkConfig& cfg, Shape shape, Rng& rng) {
  if (cfg.scheme == WeightScheme::FullPrecision) return std::make_unique<FullPrecisionKernel>(std::move(shape), rng);
  // Without pretrained weights, distributions start from a random continuous tensor.
  const Tensor continuous = sample_standard_normal(rng, shape);
  WeightDist dist = init_from_pretrained(normalize_pretrained(continuous), InitConfig{Real(0.05), Real(0.95), cfg.mode});
  if (cfg.scheme == WeightScheme::Gumbel) {
    return std::make_unique<GumbelKernel>(std::move(shape), std::move(dist), cfg.gumbel_tau);
  }
  return std::make_unique<LrKernel>(std::move(shape), std::move(dist));
}

}  // namespace

Network::Network(NetworkConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t channels = cfg_.input[0], h = cfg_.input[1], w = cfg_.input[2];
  for (const auto& spec : cfg_.conv) {
    ConvGeometry geom{channels, h, w, spec.kernel, spec.kernel, 1, 0};
    layers_.push_back(std::make_unique<ConvLayer>(
        make_kernel(cfg_, {spec.channels, channels, spec.kernel, spec.kernel}, init_rng), geom));
    layers_.push_back(std::make_unique<BatchNormLayer>(spec.channels, cfg_.bn_momentum, cfg_.bn_eps));
    layers_.push_back(std::make_unique<ReluLayer>());
    layers_.push_back(std::make_unique<MaxPool2Layer>());
    channels = spec.channels;
    h = geom.out_h() / 2;
    w = geom.out_w() / 2;
  }
  const std::size_t flat = channels * h * w;
  layers_.push_back(std::make_unique<FlattenLayer>());
  layers_.push_back(std::make_unique<DropoutLayer>(cfg_.dropout));
  layers_.push_back(std::make_unique<DenseLayer>(make_kernel(cfg_, {cfg_.fc_width, flat}, init_rng), false));
  layers_.push_back(std::make_unique<ReluLayer>());
  output_index_ = layers_.size();
  layers_.push_back(std::make_unique<DenseLayer>(
      std::make_unique<FullPrecisionKernel>(Shape{cfg_.num_classes, cfg_.fc_width}, init_rng, true), true));
  layers_.front()->set_propagate_input_grad(false);
  first_nonfinite_ = layers_.size();
}

std::string Network::topology() const { return network_to_json(cfg_).dump(); }

Tensor Network::forward(const Tensor& x, ForwardContext& ctx) {
  first_nonfinite_ = layers_.size();
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, ctx);
    if (first_nonfinite_ == layers_.size() && !h.all_finite()) first_nonfinite_ = i;
  }
  return h;
}

Tensor Network::backward(const Tensor& grad_logits) {
  Tensor g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto p : layers_[i]->params()) {
      p.name = std::to_string(i) + "." + layers_[i]->kind() + "." + p.name;
      out.push_back(p);
    }
  }
  return out;
}

std::vector<BufferRef> Network::buffers() {
  std::vector<BufferRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto b : layers_[i]->buffers()) {
      b.name = std::to_string(i) + "." + layers_[i]->kind() + "." + b.name;
      out.push_back(b);
    }
  }
  return out;
}

void Network::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

namespace {

WeightKernel* kernel_of(Layer& layer) {
  if (auto* conv = dynamic_cast<ConvLayer*>(&layer)) return &conv->kernel();
  if (auto* dense = dynamic_cast<DenseLayer*>(&layer)) return &dense->kernel();
  return nullptr;
}

}  // namespace

std::vector<StochasticLayerRef> Network::stochastic_layers() {
  std::vector<StochasticLayerRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* k = dynamic_cast<StochasticKernel*>(kernel_of(*layers_[i]))) out.push_back({i, k});
  }
  return out;
}

DenseLayer& Network::output_layer() { return static_cast<DenseLayer&>(*layers_[output_index_]); }

void Network::set_inference_weights(const std::vector<Tensor>& weights) {
  auto layers = stochastic_layers();
  if (weights.size() != layers.size()) {
    throw DimensionError("expected " + std::to_string(layers.size()) + " inference weight tensors, got " +
                         std::to_string(weights.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].kernel->set_inference_weights(weights[i]);
}

void Network::clear_inference_weights() {
  for (auto& ref : stochastic_layers()) ref.kernel->clear_inference_weights();
}

Tensor weight_of(const WeightKernel& kernel) {
  if (const auto* fp = dynamic_cast<const FullPrecisionKernel*>(&kernel)) return fp->weight();
  if (const auto* st = dynamic_cast<const StochasticKernel*>(&kernel)) return moments(st->dist()).mean;
  throw ProtocolError("unknown weight kernel");
}

void initialize_from_pretrained(Network& target, Network& pretrained, Real p_min, Real p_max) {
  const NetworkConfig& tc = target.config();
  const NetworkConfig& pc = pretrained.config();
  if (pc.scheme != WeightScheme::FullPrecision) {
    throw TopologyError("initialization source must be a full-precision network");
  }
  if (tc.scheme == WeightScheme::FullPrecision) {
    throw TopologyError("initialization target must be a stochastic network");
  }
  if (tc.input != pc.input || tc.conv != pc.conv || tc.fc_width != pc.fc_width || tc.num_classes != pc.num_classes) {
    throw TopologyError("pretrained network layout " + pretrained.topology() + " does not match " + target.topology());
  }
  const InitConfig init{p_min, p_max, tc.mode};
  init.validate();

  Real last_std = 1;
  for (std::size_t i = 0; i < target.layer_count(); ++i) {
    Layer& dst = target.layer(i);
    Layer& src = pretrained.layer(i);
    if (i == target.layer_count() - 1) {
      auto& out_dst = static_cast<DenseLayer&>(dst);
      auto& out_src = static_cast<DenseLayer&>(src);
      Tensor w = static_cast<FullPrecisionKernel&>(out_src.kernel()).weight();
      for (Real& v : w.data()) v *= last_std;
      static_cast<FullPrecisionKernel&>(out_dst.kernel()).weight() = w;
      out_dst.bias() = out_src.bias();
    } else if (auto* kernel = dynamic_cast<StochasticKernel*>(kernel_of(dst))) {
      const Tensor& w = static_cast<FullPrecisionKernel*>(kernel_of(src))->weight();
      last_std = population_std(w);
      kernel->set_dist(init_from_pretrained(normalize_pretrained(w), init));
    } else if (auto* bn = dynamic_cast<BatchNormLayer*>(&dst)) {
      auto& bn_src = static_cast<BatchNormLayer&>(src);
      bn->gamma() = bn_src.gamma();
      bn->beta() = bn_src.beta();
      bn->running_mean() = bn_src.running_mean();
      bn->running_var() = bn_src.running_var();
      for (Real& v : bn->running_mean().data()) v /= last_std;
      for (Real& v : bn->running_var().data()) v /= last_std * last_std;
    }
  }
}

}  // namespace lrnet
