#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lrnet/diagnostics.hpp"
#include "lrnet/errors.hpp"
#include "lrnet/eval.hpp"
#include "support.hpp"

using namespace lrnet;
using oracle::random_tensor;

namespace {

double phi(double x, double m, double s) { return 0.5 * std::erfc(-(x - m) / (s * std::sqrt(2.0))); }

// O(n^2): evaluate the empirical CDF and its left limit at every sample.
double ks_reference(const std::vector<Real>& xs, double m, double s) {
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (Real x : xs) {
    double le = 0, lt = 0;
    for (Real y : xs) {
      le += y <= x;
      lt += y < x;
    }
    const double f = phi(x, m, s);
    d = std::max({d, std::abs(le / n - f), std::abs(lt / n - f)});
  }
  return d;
}

// Pretrained-style weights for one neuron mapped to init-level distributions.
WeightDist init_level_dist(std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w({1, fan_in});
  for (Real& v : w.data()) v = static_cast<Real>(rng.normal());
  return init_from_pretrained(normalize_pretrained(w), InitConfig{});
}

}  // namespace

TEST(Ks, MatchesQuadraticReference) {
  Rng rng(1);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Real> xs(300 + 50 * rep);
    for (Real& x : xs) x = static_cast<Real>(rng.normal() * 1.3 + 0.2);
    // Ties exercise the left-limit branch.
    for (std::size_t i = 0; i < 40; ++i) xs[i] = xs[i % 7];
    for (double m : {0.2, 0.5}) {
      for (double s : {1.3, 0.8}) EXPECT_NEAR(ks_distance(xs, m, s), ks_reference(xs, m, s), 1e-12);
    }
  }
}

TEST(Ks, PointMassAndRange) {
  EXPECT_EQ(ks_distance(std::vector<Real>(50, Real(2)), 2, 0), 0);
  EXPECT_EQ(ks_distance(std::vector<Real>(50, Real(1)), 2, 0), 1);
  Rng rng(2);
  std::vector<Real> xs(100);
  for (Real& x : xs) x = static_cast<Real>(rng.uniform());
  const double d = ks_distance(xs, 10, 1);
  EXPECT_GE(d, 0);
  EXPECT_LE(d, 1);
  EXPECT_THROW(ks_distance({}, 0, 1), Error);
}

TEST(Histogram, CountsSumAndEdges) {
  Rng rng(3);
  std::vector<Real> xs(5000);
  for (Real& x : xs) x = static_cast<Real>(rng.normal());
  const auto edges = freedman_diaconis_edges(xs);
  ASSERT_GE(edges.size(), 2u);
  EXPECT_TRUE(std::is_sorted(edges.begin(), edges.end()));
  EXPECT_LE(edges.front(), *std::min_element(xs.begin(), xs.end()));
  EXPECT_GE(edges.back(), *std::max_element(xs.begin(), xs.end()));
  const Histogram h = histogram(xs, edges);
  EXPECT_EQ(h.total(), xs.size());
  EXPECT_EQ(h.counts.size(), edges.size() - 1);
  // Outside values are clamped rather than dropped.
  EXPECT_EQ(histogram(std::vector<Real>{-5, 0.5, 5}, {0, 1}).counts, (std::vector<std::size_t>{3}));
  EXPECT_EQ(freedman_diaconis_edges(std::vector<Real>(10, Real(4))).size(), 2u);
}

TEST(Clt, InitLevelFanIn27IsGaussian) {
  const WeightDist dist = init_level_dist(27, 4);
  Rng hr(5);
  std::vector<Real> h(27);
  for (Real& v : h) v = static_cast<Real>(hr.uniform());
  Rng rng(6);
  const CltReport r = clt_fidelity(dist, 0, h, 10000, rng);
  EXPECT_LT(r.ks, 0.03);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.draws.size(), 10000u);
  EXPECT_EQ(r.explicit_hist.total(), 10000u);
  EXPECT_EQ(r.gaussian_hist.total(), 10000u);
  // Gaussian parameters come straight from the weight moments.
  const auto p = outcome_probs(dist);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < 27; ++i) {
    const double mu = p.plus[i] - p.minus[i];
    m += mu * h[i];
    v += (p.plus[i] + p.minus[i] - mu * mu) * h[i] * h[i];
  }
  EXPECT_NEAR(r.mean, m, 1e-12);
  EXPECT_NEAR(r.stddev, std::sqrt(v), 1e-12);
}

TEST(Clt, NearDeterministicBreaksTheApproximation) {
  Rng rng(7);
  TernaryDist d{Tensor({1, 27}), Tensor({1, 27})};
  for (std::size_t i = 0; i < 27; ++i) {
    d.a[i] = rng.uniform() < 0.4 ? 6 : -6;
    d.b[i] = rng.uniform() < 0.5 ? -6 : 6;
  }
  std::vector<Real> h(27);
  for (Real& v : h) v = static_cast<Real>(rng.uniform());
  const CltReport r = clt_fidelity(d, 0, h, 10000, rng);
  EXPECT_GT(r.ks, 0.1);
}

TEST(Clt, ZeroVarianceIsFlaggedDegenerate) {
  TernaryDist d{Tensor({2, 3}, -80), Tensor({2, 3}, 80)};
  Rng rng(8);
  const CltReport r = clt_fidelity(d, 1, std::vector<Real>{1, 2, 3}, 1000, rng);
  EXPECT_TRUE(r.degenerate);
  for (Real x : r.draws) EXPECT_EQ(x, 6);
  EXPECT_EQ(r.ks, 0);
  EXPECT_THROW(clt_fidelity(d, 0, std::vector<Real>{1, 2, 3}, 999, rng), Error);
  EXPECT_THROW(clt_fidelity(d, 2, std::vector<Real>{1, 2, 3}, 1000, rng), Error);
  EXPECT_THROW(clt_fidelity(d, 0, std::vector<Real>{1, 2}, 1000, rng), DimensionError);
}

TEST(Clt, NetworkNeuronUsesConvolutionPatch) {
  NetworkConfig cfg;
  cfg.input = {3, 9, 9};
  cfg.conv = {{4, 3}};
  cfg.fc_width = 6;
  cfg.num_classes = 3;
  Rng init(9);
  Network net(cfg, init);
  Rng xr(10);
  const Tensor example = random_tensor({3, 9, 9}, xr, 0, 1);
  const std::size_t channel = 2, pixel = 17, pixels = 7 * 7;
  Rng rng(11);
  const CltReport r = clt_fidelity(net, example, 0, channel * pixels + pixel, 2000, rng);
  // Mean pre-activation from a direct convolution with the mean weights.
  const auto p = outcome_probs(net.stochastic_layers()[0].kernel->dist());
  Tensor mu({4, 3, 3, 3});
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = p.plus[i] - p.minus[i];
  const Tensor y = oracle::conv2d(example.reshaped({1, 3, 9, 9}), mu);
  EXPECT_NEAR(r.mean, y[channel * pixels + pixel], 1e-12);
  EXPECT_EQ(r.layer, 0u);
  EXPECT_THROW(clt_fidelity(net, example, 2, 0, 1000, rng), Error);
  EXPECT_THROW(clt_fidelity(net, example, 0, 4 * pixels, 1000, rng), Error);
}

TEST(Clt, CsvHasOneRowPerBin) {
  const WeightDist dist = init_level_dist(27, 12);
  Rng rng(13);
  const CltReport r = clt_fidelity(dist, 0, std::vector<Real>(27, Real(0.5)), 1000, rng);
  const auto dir = oracle::temp_dir("cltcsv");
  write_clt_csv(dir / "clt.csv", r);
  std::ifstream in(dir / "clt.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,neuron,mean,stddev,ks,degenerate,bin_lo,bin_hi,explicit_count,gaussian_count");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, r.explicit_hist.counts.size());
}

TEST(EntropyTrace, FrozenTrainingIsConstantAndStartsAtInit) {
  NetworkConfig cfg;
  cfg.input = {1, 6, 6};
  cfg.conv = {{2, 3}};
  cfg.fc_width = 4;
  cfg.num_classes = 2;
  Rng init(14);
  Network net(cfg, init);
  Dataset d;
  Rng dr(15);
  d.images = random_tensor({16, 1, 6, 6}, dr, 0, 1);
  d.labels.assign(16, 0);
  for (std::size_t i = 0; i < 16; i += 2) d.labels[i] = 1;
  d.num_classes = 2;

  std::vector<double> expect;
  for (auto& ref : net.stochastic_layers()) {
    const auto p = outcome_probs(ref.kernel->dist());
    double s = 0;
    for (std::size_t i = 0; i < p.zero.size(); ++i) {
      for (double q : {p.minus[i], p.zero[i], p.plus[i]}) s -= q > 0 ? q * std::log2(q) : 0;
    }
    expect.push_back(s / p.zero.size());
  }

  TrainConfig c;
  c.lr = 0;
  c.batch_size = 4;
  c.epochs = 3;
  c.lr_drops.clear();
  Trainer t(net, c);
  EntropyTrace trace;
  trace.attach(t);
  t.fit(d);
  const auto layers = net.stochastic_layers();
  ASSERT_EQ(trace.rows().size(), 4 * layers.size());  // epochs 0..3
  for (const auto& row : trace.rows()) {
    std::size_t ord = 0;
    while (layers[ord].layer_index != row.layer) ++ord;
    EXPECT_NEAR(row.avg_entropy, expect[ord], 1e-12) << "epoch " << row.epoch;
  }
}

TEST(Gumbel, ComparisonStartsFromIdenticalParameters) {
  NetworkConfig cfg;
  cfg.input = {1, 6, 6};
  cfg.conv = {{2, 3}};
  cfg.fc_width = 4;
  cfg.num_classes = 2;
  Rng init(16);
  Network lr(cfg, init);
  NetworkConfig gcfg = cfg;
  gcfg.scheme = WeightScheme::Gumbel;
  gcfg.gumbel_tau = Real(0.5);
  Network gumbel(gcfg, init);
  copy_parameters(lr, gumbel);
  auto lp = lr.params(), gp = gumbel.params();
  ASSERT_EQ(lp.size(), gp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) EXPECT_EQ(*lp[i].value, *gp[i].value) << lp[i].name;

  Dataset d;
  Rng dr(17);
  d.images = random_tensor({12, 1, 6, 6}, dr, 0, 1);
  for (int i = 0; i < 12; ++i) d.labels.push_back(i % 2);
  d.num_classes = 2;
  TrainConfig c;
  c.batch_size = 4;
  c.lr_drops.clear();
  const auto rows = compare_gumbel(lr, gumbel, d, c, 2);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].method, "lr");
  EXPECT_EQ(rows[3].method, "gumbel");
  EXPECT_EQ(rows[3].epoch, 2u);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.mean_epoch_loss));

  NetworkConfig other = cfg;
  other.fc_width = 5;
  Network mismatch(other, init);
  EXPECT_THROW(copy_parameters(lr, mismatch), TopologyError);
}

TEST(Pgm, RoundTripAndErrors) {
  Pgm img{3, 2, {0, 10, 20, 30, 40, 255}};
  const auto bytes = encode_pgm(img);
  const std::string head(bytes.begin(), bytes.begin() + 11);
  EXPECT_EQ(head, "P5\n3 2\n255\n");
  const Pgm back = decode_pgm(bytes);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  auto bad = bytes;
  bad[1] = '2';
  EXPECT_THROW(decode_pgm(bad), DataError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_pgm(bad), DataError);
}

TEST(Pgm, KernelImages) {
  Tensor zeros({2, 1, 3, 3});
  for (auto px : kernel_image(zeros, 1, true).pixels) EXPECT_EQ(px, 128);
  Tensor checker({1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) checker.at({0, 0, y, x}) = (x + y) % 2 ? 1 : -1;
  const Pgm img = kernel_image(checker, 0, true);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(img.pixels[y * 4 + x], (x + y) % 2 ? 255 : 0);
  // Input channels sit side by side.
  const Pgm wide = kernel_image(Tensor({1, 3, 2, 2}, 1), 0, true);
  EXPECT_EQ(wide.width, 6u);
  EXPECT_EQ(wide.height, 2u);
  EXPECT_THROW(kernel_image(Tensor({1, 1, 2, 2}, Real(0.5)), 0, true), ProtocolError);
  const Pgm gray = kernel_image(Tensor({1, 1, 1, 2}, {0, 4}), 0, false, 0, 4);
  EXPECT_EQ(gray.pixels, (std::vector<std::uint8_t>{0, 255}));
}

TEST(Pgm, ExportsFirstLayerKernels) {
  Rng init(18);
  Network full(NetworkConfig::full_mnist(), init);
  const auto dir = oracle::temp_dir("kernels");
  const auto files = export_kernels(full, dir);
  ASSERT_EQ(files.size(), 25u);
  EXPECT_EQ(files[0].filename(), "kernel_00.pgm");
  const Tensor mode = mode_weights(full.stochastic_layers()[0].kernel->dist());
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ifstream in(files[i], std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const Pgm img = decode_pgm(bytes);
    EXPECT_EQ(img.width, 5u);
    EXPECT_EQ(img.height, 5u);
    for (std::size_t p = 0; p < 25; ++p) {
      const Real w = mode[i * 25 + p];
      EXPECT_EQ(img.pixels[p], w < 0 ? 0 : (w > 0 ? 255 : 128));
    }
  }
  NetworkConfig fp = NetworkConfig::desk_mnist();
  fp.scheme = WeightScheme::FullPrecision;
  Network desk(fp, init);
  const auto few = export_kernels(desk, oracle::temp_dir("kernels_fp"));
  EXPECT_EQ(few.size(), 8u);  // only 8 channels exist
}
