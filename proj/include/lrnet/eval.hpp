#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

/// Fraction of correctly classified examples with deterministic inference
/// (batch norm on running statistics, no noise, no dropout).
Real accuracy(Network& net, const Dataset& data, std::size_t batch_size = 1000);

/// Accuracy with every stochastic layer replaced by its mean weights.
Real evaluate_mean_network(Network& net, const Dataset& data);

/// One discrete draw per stochastic layer, in layer order.
std::vector<Tensor> sample_network_weights(Network& net, Rng& rng);

/// Throws ProtocolError unless every entry lies in the support of `mode`.
void check_discrete(const Tensor& weights, WeightMode mode);

struct SampleResult {
  std::size_t sample;
  std::uint64_t seed;
  Real val_accuracy;
  Real test_accuracy;  // NaN when no test split was given
};

struct SampledEvaluation {
  std::vector<SampleResult> samples;
  std::size_t best = 0;  // index of the sample with the highest validation accuracy
  Real best_val_accuracy = 0;
  Real best_test_accuracy = 0;
  std::vector<Tensor> best_weights;

  std::vector<Real> val_accuracies() const;
  std::vector<Real> test_accuracies() const;
};

/// Replaces every batch-norm layer's running statistics with the exact mean
/// and unbiased variance of its input over `data`, layer by layer, with the
/// currently installed weights.
void recalibrate_batchnorm(Network& net, const Dataset& data, std::size_t batch_size = 1000);

/// Draws k weight sets (sample i seeded with mix_seed(seed, i)), scores each on
/// `val` and optionally `test`, and keeps the set with the best validation
/// accuracy (first one on ties). The network is left with those weights installed.
/// With `recalibrate`, batch-norm statistics are re-estimated on it for every
/// sample and the best sample's statistics are left in place.
SampledEvaluation evaluate_sampled(Network& net, const Dataset& val, const Dataset* test, std::uint64_t seed,
                                   std::size_t k, const Dataset* recalibrate = nullptr);

/// Columns: sample,seed,val_accuracy,test_accuracy.
void write_eval_csv(const std::filesystem::path& path, const SampledEvaluation& eval);

}  // namespace lrnet
