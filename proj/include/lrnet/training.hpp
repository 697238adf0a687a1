#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/dist.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

struct LrDrop {
  std::size_t epoch = 0;
  Real divisor = 10;

  friend bool operator==(const LrDrop&, const LrDrop&) = default;
};

struct AdamConfig {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  Real lr = Real(0.01);
  std::vector<LrDrop> lr_drops{{100, 10}};
  std::size_t epochs = 190;
  Real weight_decay = Real(1e-4);       // final full-precision layer only
  Real probability_decay = Real(1e-11); // L2 on logits
  Real beta_param = Real(1e-6);         // beta-density penalty, binary only
  WeightMode mode = WeightMode::Ternary;
  std::uint64_t seed = 1;
  AdamConfig adam;
  std::size_t log_interval = 10;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Initial rate divided by every divisor whose drop epoch has been reached.
Real lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct AdamMoments {
  Tensor first;
  Tensor second;
};

struct AdamState {
  std::map<std::string, AdamMoments> moments;
  std::uint64_t timestep = 0;
};

/// One bias-corrected Adam step at timestep `t` (t >= 1).
void adam_update(Tensor& param, const Tensor& grad, AdamMoments& state, Real lr, const AdamConfig& adam,
                 std::uint64_t t);

struct LossBreakdown {
  Real data = 0;
  Real probability_decay = 0;  // already scaled by its coefficient
  Real beta = 0;
  Real weight_decay = 0;

  Real total() const noexcept { return data + probability_decay + beta + weight_decay; }
};

/// Regularizer values (scaled) and their gradients added to the parameter grads.
LossBreakdown add_regularizers(Network& net, const TrainConfig& cfg, bool accumulate_grads);

/// Forward with fresh noise, backward, regularizers, one Adam update.
/// Returns the loss before the update. Throws DivergenceError on a non-finite loss.
LossBreakdown train_step(Network& net, const Batch& batch, const TrainConfig& cfg, AdamState& opt, Rng& rng, Real lr);

struct StepRecord {
  std::size_t epoch;
  std::uint64_t step;
  LossBreakdown loss;
  Real lr;
};

struct EpochSummary {
  std::size_t epoch;
  Real mean_loss;       // total loss averaged over the epoch's steps
  Real mean_data_loss;  // cross-entropy only
  Real last_batch_loss;
  Real lr;
};

/// Mean entropy (bits) of each stochastic layer, in layer order.
std::vector<Real> layer_entropies(Network& net);

/// Epoch loop with deterministic shuffling and resumable state.
class Trainer {
 public:
  Trainer(Network& net, TrainConfig cfg);

  Network& network() noexcept { return *net_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  AdamState& optimizer() noexcept { return opt_; }
  Rng& rng() noexcept { return rng_; }

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step_in_epoch() const noexcept { return step_in_epoch_; }
  std::uint64_t global_step() const noexcept { return global_step_; }

  /// Called after every step.
  std::function<void(const StepRecord&)> on_step;
  /// Called once before the first epoch (epoch 0) and after each completed epoch.
  std::function<void(std::size_t epoch, Network&)> on_epoch;
  /// Optional per-image augmentation for training batches.
  std::function<Tensor(const Tensor&, Rng&)> augment;

  /// Runs (or resumes) the current epoch and advances to the next.
  EpochSummary run_epoch(const Dataset& train);
  /// Runs until `config().epochs` epochs are complete.
  std::vector<EpochSummary> fit(const Dataset& train);
  /// Runs at most `max_steps` steps and returns their records (used for resume checks).
  std::vector<StepRecord> run_steps(const Dataset& train, std::size_t max_steps);

  void save(const std::filesystem::path& path, const std::string& meta = "") const;
  void load(const std::filesystem::path& path);

 private:
  StepRecord step(const Batch& batch);
  Batch augmented(Batch batch);

  Network* net_;
  TrainConfig cfg_;
  AdamState opt_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::size_t step_in_epoch_ = 0;
  std::uint64_t global_step_ = 0;
  bool started_ = false;
  Real epoch_loss_sum_ = 0;
  Real epoch_data_sum_ = 0;
};

/// Stream used for per-epoch batch shuffling, derived from the run seed.
std::uint64_t shuffle_seed_for(std::uint64_t seed);
/// Seed of the weight-initialization stream.
std::uint64_t init_seed_for(std::uint64_t seed);

}  // namespace lrnet
