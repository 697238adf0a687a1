#include "lrnet/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "lrnet/csv.hpp"
#include "lrnet/errors.hpp"
#include "lrnet/ops.hpp"

namespace lrnet {

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

namespace {

double quantile(const std::vector<Real>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) * (1 - frac) + static_cast<double>(sorted[hi]) * frac;
}

constexpr std::size_t kMaxBins = 1000;

}  // namespace

std::vector<double> freedman_diaconis_edges(std::span<const Real> values) {
  if (values.empty()) throw Error("histogram of no values");
  std::vector<Real> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  if (hi <= lo) return {lo - 0.5, lo + 0.5};
  const double n = static_cast<double>(sorted.size());
  const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  std::size_t bins;
  if (iqr > 0) {
    const double width = 2 * iqr / std::cbrt(n);
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
  } else {
    bins = static_cast<std::size_t>(std::ceil(std::log2(n))) + 1;  // Sturges
  }
  bins = std::clamp<std::size_t>(bins, 1, kMaxBins);
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  edges.back() = hi;
  return edges;
}

Histogram histogram(std::span<const Real> values, std::vector<double> edges) {
  if (edges.size() < 2) throw Error("histogram needs at least two edges");
  Histogram h;
  h.counts.assign(edges.size() - 1, 0);
  for (Real v : values) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), static_cast<double>(v));
    std::size_t bin = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    bin = std::min(bin, h.counts.size() - 1);
    ++h.counts[bin];
  }
  h.edges = std::move(edges);
  return h;
}

double normal_cdf(double x, double mean, double stddev) {
  return 0.5 * std::erfc(-(x - mean) / (stddev * std::sqrt(2.0)));
}

double ks_distance(std::vector<Real> samples, double mean, double stddev) {
  if (samples.empty()) throw Error("KS distance of no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  if (stddev <= 0) {
    const auto lt = std::lower_bound(samples.begin(), samples.end(), mean) - samples.begin();
    const auto le = std::upper_bound(samples.begin(), samples.end(), mean) - samples.begin();
    return std::max(static_cast<double>(lt) / n, 1 - static_cast<double>(le) / n);
  }
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = normal_cdf(samples[i], mean, stddev);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

CltReport clt_fidelity(const WeightDist& dist, std::size_t neuron, std::span<const Real> h, std::size_t n_draws,
                       Rng& rng) {
  const Shape& shape = shape_of(dist);
  const std::size_t fan_in = shape_size(shape) / shape[0];
  if (neuron >= shape[0]) throw Error("neuron " + std::to_string(neuron) + " out of range");
  if (h.size() != fan_in) {
    throw DimensionError("input of length " + std::to_string(h.size()) + " for fan-in " + std::to_string(fan_in));
  }
  if (n_draws < 1000) throw Error("CLT check needs at least 1000 draws");

  const OutcomeProbs probs = outcome_probs(dist);
  const Moments mom = moments(dist);
  const std::size_t off = neuron * fan_in;
  CltReport r;
  r.neuron = neuron;
  double m = 0, v = 0;
  for (std::size_t j = 0; j < fan_in; ++j) {
    m += static_cast<double>(mom.mean[off + j]) * h[j];
    v += static_cast<double>(mom.var[off + j]) * h[j] * h[j];
  }
  r.mean = m;
  r.stddev = std::sqrt(std::max(v, 0.0));
  r.degenerate = r.stddev <= 1e-12 * (1 + std::abs(m));

  r.draws.resize(n_draws);
  for (auto& z : r.draws) {
    double acc = 0;
    for (std::size_t j = 0; j < fan_in; ++j) {
      const double u = rng.uniform();
      const double pm = probs.minus[off + j], p0 = probs.zero[off + j];
      const double w = u < pm ? -1.0 : (u < pm + p0 ? 0.0 : 1.0);
      acc += w * h[j];
    }
    z = static_cast<Real>(acc);
  }
  r.ks = ks_distance(r.draws, r.mean, r.degenerate ? 0.0 : r.stddev);

  std::vector<Real> gauss(n_draws);
  for (auto& g : gauss) g = static_cast<Real>(r.mean + r.stddev * rng.normal());
  if (r.degenerate) std::fill(gauss.begin(), gauss.end(), static_cast<Real>(r.mean));
  auto edges = freedman_diaconis_edges(r.draws);
  r.explicit_hist = histogram(r.draws, edges);
  r.gaussian_hist = histogram(gauss, std::move(edges));
  return r;
}

CltReport clt_fidelity(Network& net, const Tensor& example, std::size_t stochastic_ordinal, std::size_t neuron,
                       std::size_t n_draws, Rng& rng) {
  const auto layers = net.stochastic_layers();
  if (stochastic_ordinal >= layers.size()) {
    throw Error("layer " + std::to_string(stochastic_ordinal) + " is not a stochastic layer (network has " +
                std::to_string(layers.size()) + ")");
  }
  const auto& ref = layers[stochastic_ordinal];
  Shape in_shape = {1};
  for (std::size_t d : example.shape()) in_shape.push_back(d);
  Tensor x = example.reshaped(in_shape);
  ForwardContext ctx{Mode::Infer, nullptr};
  for (std::size_t i = 0; i < ref.layer_index; ++i) x = net.layer(i).forward(x, ctx);

  std::vector<Real> h;
  std::size_t row = neuron;
  if (auto* conv = dynamic_cast<ConvLayer*>(&net.layer(ref.layer_index))) {
    const ConvGeometry& g = conv->geometry();
    const Tensor cols = im2col(x, g.kernel_h, g.kernel_w, g.stride, g.pad);
    const std::size_t pixels = cols.dim(1);
    if (neuron >= pixels * ref.kernel->out_features()) throw Error("neuron " + std::to_string(neuron) + " out of range");
    row = neuron / pixels;
    const std::size_t px = neuron % pixels;
    for (std::size_t k = 0; k < cols.dim(0); ++k) h.push_back(cols[k * pixels + px]);
  } else {
    h.assign(x.data().begin(), x.data().end());
  }
  CltReport r = clt_fidelity(ref.kernel->dist(), row, h, n_draws, rng);
  r.layer = ref.layer_index;
  r.neuron = neuron;
  return r;
}

void write_clt_csv(const std::filesystem::path& path, const CltReport& r) {
  CsvWriter csv(path, {"layer", "neuron", "mean", "stddev", "ks", "degenerate", "bin_lo", "bin_hi", "explicit_count",
                       "gaussian_count"});
  for (std::size_t i = 0; i < r.explicit_hist.counts.size(); ++i) {
    csv.row({std::to_string(r.layer), std::to_string(r.neuron), format_real(static_cast<Real>(r.mean)),
             format_real(static_cast<Real>(r.stddev)), format_real(static_cast<Real>(r.ks)),
             r.degenerate ? "1" : "0", format_real(static_cast<Real>(r.explicit_hist.edges[i])),
             format_real(static_cast<Real>(r.explicit_hist.edges[i + 1])), std::to_string(r.explicit_hist.counts[i]),
             std::to_string(r.gaussian_hist.counts[i])});
  }
}

void EntropyTrace::attach(Trainer& trainer) {
  auto previous = trainer.on_epoch;
  trainer.on_epoch = [this, previous](std::size_t epoch, Network& net) {
    record(epoch, net);
    if (previous) previous(epoch, net);
  };
}

void EntropyTrace::record(std::size_t epoch, Network& net) {
  for (auto& ref : net.stochastic_layers()) {
    rows_.push_back({epoch, ref.layer_index, mean(entropy(ref.kernel->dist()))});
  }
}

Real EntropyTrace::final_entropy(std::size_t layer) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->layer == layer) return it->avg_entropy;
  }
  throw Error("no entropy recorded for layer " + std::to_string(layer));
}

void EntropyTrace::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, {"epoch", "layer", "avg_entropy"});
  for (const auto& r : rows_) csv.row({std::to_string(r.epoch), std::to_string(r.layer), format_real(r.avg_entropy)});
}

void copy_parameters(Network& from, Network& to) {
  std::map<std::string, Tensor*> src;
  for (auto& p : from.params()) src[p.name] = p.value;
  for (auto& b : from.buffers()) src[b.name] = b.value;
  auto copy = [&src](const std::string& name, Tensor* dst) {
    const auto it = src.find(name);
    if (it == src.end()) throw TopologyError("source network lacks " + name);
    if (it->second->shape() != dst->shape()) throw TopologyError("shape mismatch for " + name);
    *dst = *it->second;
  };
  for (auto& p : to.params()) copy(p.name, p.value);
  for (auto& b : to.buffers()) copy(b.name, b.value);
}

std::vector<GumbelCompareRow> compare_gumbel(Network& lr_net, Network& gumbel_net, const Dataset& train,
                                             TrainConfig cfg, std::size_t epochs) {
  copy_parameters(lr_net, gumbel_net);
  cfg.epochs = epochs;
  std::vector<GumbelCompareRow> rows;
  for (auto [net, name] : {std::pair<Network*, const char*>{&lr_net, "lr"}, {&gumbel_net, "gumbel"}}) {
    Trainer trainer(*net, cfg);
    for (const auto& s : trainer.fit(train)) rows.push_back({s.epoch + 1, name, s.mean_loss, s.last_batch_loss});
  }
  return rows;
}

void write_gumbel_csv(const std::filesystem::path& path, const std::vector<GumbelCompareRow>& rows) {
  CsvWriter csv(path, {"epoch", "method", "mean_epoch_loss", "last_batch_loss"});
  for (const auto& r : rows) {
    csv.row({std::to_string(r.epoch), r.method, format_real(r.mean_epoch_loss), format_real(r.last_batch_loss)});
  }
}

std::vector<std::uint8_t> encode_pgm(const Pgm& img) {
  if (img.pixels.size() != img.width * img.height) throw DimensionError("PGM pixel count does not match its size");
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Pgm decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw DataError("not a binary PGM");
  Pgm img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw DataError("only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw DataError("malformed PGM header");
  }
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos || bytes.size() - pos != img.width * img.height) throw DataError("PGM payload size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

Pgm kernel_image(const Tensor& weights, std::size_t index, bool discrete, Real lo, Real hi) {
  if (weights.rank() != 4) throw DimensionError("kernel image needs [c_out, c_in, kh, kw] weights");
  const std::size_t cin = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
  if (index >= weights.dim(0)) throw DimensionError("kernel index out of range");
  Pgm img{kw * cin, kh, std::vector<std::uint8_t>(kw * cin * kh)};
  const Real* w = weights.ptr() + index * cin * kh * kw;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t y = 0; y < kh; ++y) {
      for (std::size_t x = 0; x < kw; ++x) {
        const Real v = w[(c * kh + y) * kw + x];
        std::uint8_t px;
        if (discrete) {
          if (v == Real(-1)) px = 0;
          else if (v == Real(0)) px = 128;
          else if (v == Real(1)) px = 255;
          else throw ProtocolError("kernel value " + std::to_string(v) + " is not discrete");
        } else if (hi > lo) {
          px = static_cast<std::uint8_t>(std::lround(std::clamp((v - lo) / (hi - lo), Real(0), Real(1)) * 255));
        } else {
          px = 128;
        }
        img.pixels[y * img.width + c * kw + x] = px;
      }
    }
  }
  return img;
}

std::vector<std::filesystem::path> export_kernels(Network& net, const std::filesystem::path& out_dir,
                                                  std::size_t count) {
  ConvLayer* conv = nullptr;
  for (std::size_t i = 0; i < net.layer_count() && !conv; ++i) conv = dynamic_cast<ConvLayer*>(&net.layer(i));
  if (!conv) throw TopologyError("network has no convolution layer to export");

  Tensor weights;
  bool discrete = false;
  Real lo = 0, hi = 0;
  if (auto* sk = dynamic_cast<StochasticKernel*>(&conv->kernel())) {
    weights = mode_weights(sk->dist());
    discrete = true;
  } else {
    weights = weight_of(conv->kernel());
    const auto [mn, mx] = std::minmax_element(weights.data().begin(), weights.data().end());
    lo = *mn;
    hi = *mx;
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> out;
  const std::size_t n = std::min(count, weights.dim(0));
  for (std::size_t k = 0; k < n; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "kernel_%02zu.pgm", k);
    const auto path = out_dir / name;
    const auto bytes = encode_pgm(kernel_image(weights, k, discrete, lo, hi));
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("cannot write " + path.string());
    out.push_back(path);
  }
  return out;
}

}  // namespace lrnet
