#include "lrnet/training.hpp"

#include <cmath>

#include "lrnet/checkpoint.hpp"
#include "lrnet/errors.hpp"

namespace lrnet {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(lr >= 0)) throw ConfigError("train.lr must be non-negative");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(probability_decay >= 0)) throw ConfigError("train.probability_decay must be non-negative");
  if (!(beta_param >= 0)) throw ConfigError("train.beta_param must be non-negative");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0)) {
    throw ConfigError("train.adam needs beta1, beta2 in [0, 1) and eps > 0");
  }
  if (log_interval < 1) throw ConfigError("train.log_interval must be at least 1");
  for (std::size_t i = 0; i < lr_drops.size(); ++i) {
    if (!(lr_drops[i].divisor > 0)) throw ConfigError("train.lr_drops divisors must be positive");
    if (i > 0 && lr_drops[i].epoch <= lr_drops[i - 1].epoch) {
      throw ConfigError("train.lr_drops epochs must be strictly increasing");
    }
  }
}

Real lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  Real lr = cfg.lr;
  for (const auto& drop : cfg.lr_drops) {
    if (drop.epoch <= epoch) lr /= drop.divisor;
  }
  return lr;
}

void adam_update(Tensor& param, const Tensor& grad, AdamMoments& state, Real lr, const AdamConfig& adam,
                 std::uint64_t t) {
  require_same_shape(param, grad, "adam update");
  if (state.first.empty()) {
    state.first = Tensor(param.shape());
    state.second = Tensor(param.shape());
  }
  const Real correction1 = Real(1) - std::pow(adam.beta1, static_cast<Real>(t));
  const Real correction2 = Real(1) - std::pow(adam.beta2, static_cast<Real>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Real g = grad[i];
    state.first[i] = adam.beta1 * state.first[i] + (Real(1) - adam.beta1) * g;
    state.second[i] = adam.beta2 * state.second[i] + (Real(1) - adam.beta2) * g * g;
    const Real m_hat = state.first[i] / correction1;
    const Real v_hat = state.second[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

LossBreakdown add_regularizers(Network& net, const TrainConfig& cfg, bool accumulate_grads) {
  LossBreakdown out;
  auto add_scaled = [](Tensor* grad, const Tensor& extra, Real scale) {
    for (std::size_t i = 0; i < extra.size(); ++i) (*grad)[i] += scale * extra[i];
  };
  for (auto& ref : net.stochastic_layers()) {
    auto params = ref.kernel->params();
    auto grad_of = [&params](const char* name) -> Tensor* {
      for (auto& p : params) {
        if (p.name == name) return p.grad;
      }
      return nullptr;
    };
    if (cfg.probability_decay > 0) {
      const PenaltyResult pen = probability_decay_penalty(ref.kernel->dist());
      out.probability_decay += cfg.probability_decay * pen.value;
      if (accumulate_grads) {
        if (!pen.grad_a.empty()) add_scaled(grad_of("a"), pen.grad_a, cfg.probability_decay);
        add_scaled(grad_of("b"), pen.grad_b, cfg.probability_decay);
      }
    }
    if (cfg.beta_param > 0) {
      if (const auto* bd = std::get_if<BinaryDist>(&ref.kernel->dist())) {
        const PenaltyResult pen = beta_penalty(*bd, 2, 2);
        out.beta += cfg.beta_param * pen.value;
        if (accumulate_grads) add_scaled(grad_of("b"), pen.grad_b, cfg.beta_param);
      }
    }
  }
  if (cfg.weight_decay > 0) {
    for (auto& p : net.output_layer().params()) {
      if (p.role != ParamRole::FinalWeight) continue;
      Real ss = 0;
      for (Real w : p.value->data()) ss += w * w;
      out.weight_decay += cfg.weight_decay * ss;
      if (accumulate_grads) add_scaled(p.grad, *p.value, 2 * cfg.weight_decay);
    }
  }
  return out;
}

LossBreakdown train_step(Network& net, const Batch& batch, const TrainConfig& cfg, AdamState& opt, Rng& rng,
                         Real lr) {
  net.zero_grad();
  ForwardContext ctx{Mode::Train, &rng};
  const Tensor logits = net.forward(batch.images, ctx);
  const LossResult data = softmax_cross_entropy(logits, batch.labels);
  if (!std::isfinite(data.loss)) {
    const std::size_t layer = net.first_nonfinite_layer();
    throw DivergenceError("non-finite data loss (first non-finite output at layer " + std::to_string(layer) + ")",
                          static_cast<int>(layer));
  }
  net.backward(data.grad);
  LossBreakdown loss = add_regularizers(net, cfg, true);
  loss.data = data.loss;
  if (!std::isfinite(loss.total())) {
    throw DivergenceError("non-finite regularized loss", static_cast<int>(net.layer_count()));
  }
  ++opt.timestep;
  for (auto& p : net.params()) adam_update(*p.value, *p.grad, opt.moments[p.name], lr, cfg.adam, opt.timestep);
  return loss;
}

std::vector<Real> layer_entropies(Network& net) {
  std::vector<Real> out;
  for (auto& ref : net.stochastic_layers()) out.push_back(mean(entropy(ref.kernel->dist())));
  return out;
}

std::uint64_t shuffle_seed_for(std::uint64_t seed) { return mix_seed(seed, 2); }
std::uint64_t init_seed_for(std::uint64_t seed) { return mix_seed(seed, 0); }

Trainer::Trainer(Network& net, TrainConfig cfg) : net_(&net), cfg_(std::move(cfg)), rng_(mix_seed(cfg_.seed, 1)) {
  cfg_.validate();
}

Batch Trainer::augmented(Batch batch) {
  if (!augment) return batch;
  const Shape ex = {batch.images.dim(1), batch.images.dim(2), batch.images.dim(3)};
  const std::size_t stride = shape_size(ex);
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    Tensor img(ex, std::vector<Real>(batch.images.ptr() + i * stride, batch.images.ptr() + (i + 1) * stride));
    const Tensor out = augment(img, rng_);
    std::copy(out.data().begin(), out.data().end(), batch.images.ptr() + i * stride);
  }
  return batch;
}

StepRecord Trainer::step(const Batch& batch) {
  const Real lr = lr_schedule(epoch_, cfg_);
  const LossBreakdown loss = train_step(*net_, augmented(batch), cfg_, opt_, rng_, lr);
  StepRecord rec{epoch_, global_step_, loss, lr};
  ++global_step_;
  ++step_in_epoch_;
  epoch_loss_sum_ += loss.total();
  epoch_data_sum_ += loss.data;
  if (on_step) on_step(rec);
  return rec;
}

std::vector<StepRecord> Trainer::run_steps(const Dataset& train, std::size_t max_steps) {
  if (train.size() == 0) throw DataError("training set is empty");
  std::vector<StepRecord> out;
  if (!started_) {
    started_ = true;
    if (on_epoch) on_epoch(0, *net_);
  }
  while (out.size() < max_steps) {
    BatchIterator it(train, cfg_.batch_size, shuffle_seed_for(cfg_.seed), epoch_);
    it.skip(step_in_epoch_);
    while (out.size() < max_steps) {
      auto batch = it.next();
      if (!batch) break;
      out.push_back(step(*batch));
    }
    if (step_in_epoch_ >= it.batch_count()) {
      ++epoch_;
      step_in_epoch_ = 0;
      epoch_loss_sum_ = epoch_data_sum_ = 0;
      if (on_epoch) on_epoch(epoch_, *net_);
    }
  }
  return out;
}

EpochSummary Trainer::run_epoch(const Dataset& train) {
  if (train.size() == 0) throw DataError("training set is empty");
  if (!started_) {
    started_ = true;
    if (on_epoch) on_epoch(0, *net_);
  }
  BatchIterator it(train, cfg_.batch_size, shuffle_seed_for(cfg_.seed), epoch_);
  it.skip(step_in_epoch_);
  Real last = 0;
  while (auto batch = it.next()) last = step(*batch).loss.total();
  const Real steps = static_cast<Real>(std::max<std::size_t>(step_in_epoch_, 1));
  EpochSummary summary{epoch_, epoch_loss_sum_ / steps, epoch_data_sum_ / steps, last, lr_schedule(epoch_, cfg_)};
  ++epoch_;
  step_in_epoch_ = 0;
  epoch_loss_sum_ = epoch_data_sum_ = 0;
  if (on_epoch) on_epoch(epoch_, *net_);
  return summary;
}

std::vector<EpochSummary> Trainer::fit(const Dataset& train) {
  std::vector<EpochSummary> out;
  while (epoch_ < cfg_.epochs) out.push_back(run_epoch(train));
  return out;
}

void Trainer::save(const std::filesystem::path& path, const std::string& meta) const {
  Checkpoint ck = capture_network(*net_);
  ck.meta = meta;
  ck.epoch = epoch_;
  ck.step_in_epoch = step_in_epoch_;
  ck.global_step = global_step_;
  ck.epoch_loss_sum = epoch_loss_sum_;
  ck.epoch_data_sum = epoch_data_sum_;
  ck.rng = rng_;
  ck.optimizer = opt_;
  write_checkpoint(path, ck);
}

void Trainer::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  restore_network(ck, *net_);
  epoch_ = ck.epoch;
  step_in_epoch_ = ck.step_in_epoch;
  global_step_ = ck.global_step;
  epoch_loss_sum_ = ck.epoch_loss_sum;
  epoch_data_sum_ = ck.epoch_data_sum;
  rng_ = ck.rng;
  opt_ = ck.optimizer;
  started_ = true;
}

}  // namespace lrnet
