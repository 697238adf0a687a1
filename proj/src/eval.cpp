#include "lrnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "lrnet/errors.hpp"
#include "lrnet/csv.hpp"

namespace lrnet {

Real accuracy(Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  ForwardContext ctx{Mode::Infer, nullptr};
  std::size_t correct = 0;
  BatchIterator it(data, batch_size, 0, 0, false);
  while (auto batch = it.next()) {
    const Tensor logits = net.forward(batch->images, ctx);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      const Real* row = logits.ptr() + i * classes;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      if (static_cast<int>(arg) == batch->labels[i]) ++correct;
    }
  }
  return static_cast<Real>(correct) / static_cast<Real>(data.size());
}

Real evaluate_mean_network(Network& net, const Dataset& data) {
  net.clear_inference_weights();
  return accuracy(net, data);
}

void check_discrete(const Tensor& weights, WeightMode mode) {
  for (Real w : weights.data()) {
    const bool ok = w == Real(1) || w == Real(-1) || (mode == WeightMode::Ternary && w == Real(0));
    if (!ok) throw ProtocolError("sampled weight " + std::to_string(w) + " outside the discrete support");
  }
}

std::vector<Tensor> sample_network_weights(Network& net, Rng& rng) {
  std::vector<Tensor> out;
  for (auto& ref : net.stochastic_layers()) {
    Tensor w = sample_weights(ref.kernel->dist(), rng);
    check_discrete(w, mode_of(ref.kernel->dist()));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Real> SampledEvaluation::val_accuracies() const {
  std::vector<Real> out;
  for (const auto& s : samples) out.push_back(s.val_accuracy);
  return out;
}

std::vector<Real> SampledEvaluation::test_accuracies() const {
  std::vector<Real> out;
  for (const auto& s : samples) out.push_back(s.test_accuracy);
  return out;
}

void recalibrate_batchnorm(Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot recalibrate on an empty dataset");
  ForwardContext ctx{Mode::Infer, nullptr};
  for (std::size_t target = 0; target < net.layer_count(); ++target) {
    auto* bn = dynamic_cast<BatchNormLayer*>(&net.layer(target));
    if (!bn) continue;
    const std::size_t channels = bn->running_mean().size();
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    std::size_t count = 0;
    // Shifted sums around the current running mean keep the variance accurate.
    std::vector<double> shift(bn->running_mean().data().begin(), bn->running_mean().data().end());
    BatchIterator it(data, batch_size, 0, 0, false);
    while (auto batch = it.next()) {
      Tensor x = std::move(batch->images);
      for (std::size_t i = 0; i < target; ++i) x = net.layer(i).forward(x, ctx);
      const std::size_t b = x.dim(0);
      const std::size_t spatial = x.size() / (b * channels);
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const Real* row = x.ptr() + (n * channels + c) * spatial;
          for (std::size_t s = 0; s < spatial; ++s) {
            const double d = row[s] - shift[c];
            sum[c] += d;
            sq[c] += d * d;
          }
        }
      }
      count += b * spatial;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double mean = sum[c] / static_cast<double>(count);
      double var = sq[c] / static_cast<double>(count) - mean * mean;
      if (count > 1) var *= static_cast<double>(count) / static_cast<double>(count - 1);
      bn->running_mean()[c] = static_cast<Real>(shift[c] + mean);
      bn->running_var()[c] = static_cast<Real>(std::max(var, 0.0));
    }
  }
}

SampledEvaluation evaluate_sampled(Network& net, const Dataset& val, const Dataset* test, std::uint64_t seed,
                                   std::size_t k, const Dataset* recalibrate) {
  if (k < 1) throw ConfigError("evaluate_sampled needs k >= 1");
  if (val.size() == 0) throw DataError("validation set is empty");
  if (test && test->size() == 0) throw DataError("test set is empty");
  if (net.stochastic_layers().empty()) throw ProtocolError("network has no stochastic layers to sample");
  SampledEvaluation out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    Rng rng(s);
    std::vector<Tensor> weights = sample_network_weights(net, rng);
    net.set_inference_weights(weights);
    if (recalibrate) recalibrate_batchnorm(net, *recalibrate);
    SampleResult r{i, s, accuracy(net, val), std::numeric_limits<Real>::quiet_NaN()};
    if (test) r.test_accuracy = accuracy(net, *test);
    if (i == 0 || r.val_accuracy > out.best_val_accuracy) {
      out.best = i;
      out.best_val_accuracy = r.val_accuracy;
      out.best_test_accuracy = r.test_accuracy;
      out.best_weights = std::move(weights);
    }
    out.samples.push_back(r);
  }
  net.set_inference_weights(out.best_weights);
  if (recalibrate) recalibrate_batchnorm(net, *recalibrate);
  return out;
}

void write_eval_csv(const std::filesystem::path& path, const SampledEvaluation& eval) {
  CsvWriter csv(path, {"sample", "seed", "val_accuracy", "test_accuracy"});
  for (const auto& s : eval.samples) {
    csv.row({std::to_string(s.sample), std::to_string(s.seed), format_real(s.val_accuracy),
             std::isnan(s.test_accuracy) ? std::string() : format_real(s.test_accuracy)});
  }
}

}  // namespace lrnet
