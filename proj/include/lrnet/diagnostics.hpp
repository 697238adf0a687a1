#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/network.hpp"
#include "lrnet/training.hpp"

namespace lrnet {

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

/// Freedman-Diaconis bin width 2 IQR n^(-1/3) over the range of `values`
/// (a single bin when the spread is zero).
std::vector<double> freedman_diaconis_edges(std::span<const Real> values);
/// Values outside the edge range fall into the first or last bin.
Histogram histogram(std::span<const Real> values, std::vector<double> edges);

double normal_cdf(double x, double mean, double stddev);
/// Sup-norm distance between the empirical CDF of `samples` and N(mean, stddev^2).
/// A zero stddev compares against a point mass at `mean`.
double ks_distance(std::vector<Real> samples, double mean, double stddev);

struct CltReport {
  std::size_t layer = 0;   // network layer index
  std::size_t neuron = 0;
  std::vector<Real> draws;  // pre-activations under explicit weight draws
  double mean = 0;          // Gaussian parameters from the weight moments
  double stddev = 0;
  double ks = 0;
  bool degenerate = false;  // stddev is zero, comparison is against a point mass
  Histogram explicit_hist;
  Histogram gaussian_hist;  // same number of N(mean, stddev^2) draws on the same edges
};

/// Row `neuron` of a stochastic weight tensor applied to input `h` (length
/// fan-in), n_draws independent discrete weight draws.
CltReport clt_fidelity(const WeightDist& dist, std::size_t neuron, std::span<const Real> h, std::size_t n_draws,
                       Rng& rng);

/// Same comparison inside a network: `example` is [C, H, W]; layers before the
/// chosen stochastic layer run deterministically; for convolutions `neuron`
/// is out_channel * pixels + pixel.
CltReport clt_fidelity(Network& net, const Tensor& example, std::size_t stochastic_ordinal, std::size_t neuron,
                       std::size_t n_draws, Rng& rng);

/// Columns: layer,neuron,mean,stddev,ks,degenerate,bin_lo,bin_hi,explicit_count,gaussian_count.
void write_clt_csv(const std::filesystem::path& path, const CltReport& report);

struct EntropyRow {
  std::size_t epoch;
  std::size_t layer;
  Real avg_entropy;
};

/// Per-epoch mean entropy of every stochastic layer.
class EntropyTrace {
 public:
  /// Chains onto the trainer's epoch callback; attach before training starts.
  void attach(Trainer& trainer);
  void record(std::size_t epoch, Network& net);

  const std::vector<EntropyRow>& rows() const noexcept { return rows_; }
  /// Mean entropy of `layer` at the last recorded epoch.
  Real final_entropy(std::size_t layer) const;

  /// Columns: epoch,layer,avg_entropy.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<EntropyRow> rows_;
};

struct GumbelCompareRow {
  std::size_t epoch;
  std::string method;  // "lr" or "gumbel"
  Real mean_epoch_loss;
  Real last_batch_loss;
};

/// Trains `lr_net` and `gumbel_net` (whose parameters are first copied from
/// `lr_net`) with the same configuration for `epochs` epochs each.
std::vector<GumbelCompareRow> compare_gumbel(Network& lr_net, Network& gumbel_net, const Dataset& train,
                                             TrainConfig cfg, std::size_t epochs);

/// Copies parameters and buffers by name; shapes must match.
void copy_parameters(Network& from, Network& to);

/// Columns: epoch,method,mean_epoch_loss,last_batch_loss.
void write_gumbel_csv(const std::filesystem::path& path, const std::vector<GumbelCompareRow>& rows);

/// 8-bit P5 image, row-major.
struct Pgm {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_pgm(const Pgm& img);
Pgm decode_pgm(std::span<const std::uint8_t> bytes);

/// Kernel `index` of a [c_out, c_in, kh, kw] tensor as a kh x (kw * c_in)
/// image, input channels side by side. Discrete values map -1 -> 0,
/// 0 -> 128, +1 -> 255; otherwise `lo`/`hi` set a linear gray scale.
Pgm kernel_image(const Tensor& weights, std::size_t index, bool discrete, Real lo = -1, Real hi = 1);

/// Writes kernel_00.pgm ... for the first min(count, c_out) kernels of the
/// first convolution: most probable weights for stochastic layers, min-max
/// normalized weights for full precision.
std::vector<std::filesystem::path> export_kernels(Network& net, const std::filesystem::path& out_dir,
                                                  std::size_t count = 25);

}  // namespace lrnet
