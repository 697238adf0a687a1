#include <gtest/gtest.h>

#include <cmath>

#include "lrnet/errors.hpp"
#include "lrnet/layers.hpp"
#include "lrnet/network.hpp"
#include "lrnet/ops.hpp"
#include "support.hpp"

using namespace lrnet;
using oracle::as_vector;
using oracle::dot;
using oracle::numeric_grad;
using oracle::random_tensor;
using oracle::rel_error;

namespace {

WeightDist random_dist(Shape shape, WeightMode mode, Rng& rng, double spread = 2.0) {
  if (mode == WeightMode::Ternary) {
    return TernaryDist{random_tensor(shape, rng, -spread, spread), random_tensor(shape, rng, -spread, spread)};
  }
  return BinaryDist{random_tensor(shape, rng, -spread, spread)};
}

// Checks every parameter gradient and the input gradient of `layer` for the
// scalar loss sum(r * layer(x)), replaying the same rng for each forward.
void check_layer_grads(Layer& layer, Tensor x, std::uint64_t seed, double tol, Mode mode = Mode::Train) {
  const Rng base(seed);
  Tensor r;
  auto loss = [&]() {
    Rng rng = base;
    ForwardContext ctx{mode, &rng};
    const Tensor y = layer.forward(x, ctx);
    if (r.empty()) {
      Rng rr(seed + 1);
      r = random_tensor(y.shape(), rr);
    }
    return dot(y, r);
  };
  loss();
  layer.zero_grad();
  {
    Rng rng = base;
    ForwardContext ctx{mode, &rng};
    layer.forward(x, ctx);
  }
  const Tensor dx = layer.backward(r);
  for (auto& p : layer.params()) {
    const auto analytic = as_vector(*p.grad);
    const auto numeric = numeric_grad(*p.value, loss);
    EXPECT_LT(rel_error(analytic, numeric), tol) << layer.kind() << " param " << p.name;
  }
  if (!dx.empty()) {
    EXPECT_LT(rel_error(as_vector(dx), numeric_grad(x, loss)), tol) << layer.kind() << " input";
  }
}

}  // namespace

TEST(Layers, FullPrecisionDenseGradients) {
  Rng rng(1);
  DenseLayer layer(std::make_unique<FullPrecisionKernel>(Shape{4, 6}, rng), true);
  check_layer_grads(layer, random_tensor({5, 6}, rng), 10, 1e-8);
}

TEST(Layers, FullPrecisionConvGradients) {
  Rng rng(2);
  ConvGeometry g{2, 6, 5, 3, 3, 1, 0};
  ConvLayer layer(std::make_unique<FullPrecisionKernel>(Shape{3, 2, 3, 3}, rng), g);
  check_layer_grads(layer, random_tensor({2, 2, 6, 5}, rng), 11, 1e-8);
}

TEST(Layers, ConvMatchesDirectConvolution) {
  Rng rng(3);
  ConvGeometry g{3, 7, 6, 3, 2, 1, 0};
  auto kernel = std::make_unique<FullPrecisionKernel>(Shape{4, 3, 3, 2}, rng);
  const Tensor w = kernel->weight();
  ConvLayer layer(std::move(kernel), g);
  const Tensor x = random_tensor({2, 3, 7, 6}, rng);
  ForwardContext ctx{Mode::Infer, nullptr};
  const Tensor y = layer.forward(x, ctx);
  const Tensor ref = oracle::conv2d(x, w);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Layers, LrDenseGradientsTernaryAndBinary) {
  for (WeightMode mode : {WeightMode::Ternary, WeightMode::Binary}) {
    Rng rng(4);
    DenseLayer layer(std::make_unique<LrKernel>(Shape{5, 7}, random_dist({5, 7}, mode, rng)), false);
    check_layer_grads(layer, random_tensor({3, 7}, rng), 12, 1e-6);
  }
}

TEST(Layers, LrConvGradients) {
  Rng rng(5);
  ConvGeometry g{2, 5, 5, 3, 3, 1, 0};
  ConvLayer layer(std::make_unique<LrKernel>(Shape{3, 2, 3, 3}, random_dist({3, 2, 3, 3}, WeightMode::Ternary, rng)),
                  g);
  check_layer_grads(layer, random_tensor({2, 2, 5, 5}, rng), 13, 1e-6);
}

TEST(Layers, LrForwardMatchesMomentFormula) {
  Rng rng(6);
  const WeightDist dist = random_dist({3, 4}, WeightMode::Ternary, rng);
  LrKernel kernel({3, 4}, dist);
  const Tensor cols = random_tensor({4, 2}, rng);
  Rng noise(9);
  ForwardContext ctx{Mode::Diagnose, &noise};
  const Tensor z = kernel.forward(cols, ctx);

  // Means and variances of each weight computed from the three outcomes directly.
  const auto& t = std::get<TernaryDist>(dist);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t n = 0; n < 2; ++n) {
      double m = 0, v = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double p0 = 1 / (1 + std::exp(-t.a[i * 4 + j]));
        const double pp = (1 - p0) / (1 + std::exp(-t.b[i * 4 + j]));
        const double pm = 1 - p0 - pp;
        const double mu = pp - pm, var = pp + pm - mu * mu;
        const double h = cols[j * 2 + n];
        m += mu * h;
        v += var * h * h;
      }
      const std::size_t k = i * 2 + n;
      EXPECT_NEAR(kernel.last_mean()[k], m, 1e-12);
      EXPECT_NEAR(kernel.last_std()[k], std::sqrt(v + 1e-10), 1e-12);
      EXPECT_NEAR(z[k], m + std::sqrt(v + 1e-10) * kernel.last_noise()[k], 1e-12);
    }
  }
}

TEST(Layers, LrBackwardWithoutForwardIsProtocolError) {
  Rng rng(7);
  LrKernel kernel({2, 2}, random_dist({2, 2}, WeightMode::Binary, rng));
  EXPECT_THROW(kernel.backward(Tensor({2, 1}), false), ProtocolError);
}

TEST(Layers, GumbelGradientsWithFrozenNoise) {
  for (WeightMode mode : {WeightMode::Ternary, WeightMode::Binary}) {
    for (Real tau : {Real(0.5), Real(1.0)}) {
      Rng rng(8);
      DenseLayer layer(std::make_unique<GumbelKernel>(Shape{3, 5}, random_dist({3, 5}, mode, rng, 1.0), tau), false);
      check_layer_grads(layer, random_tensor({4, 5}, rng), 14, 1e-6);
    }
  }
}

TEST(Layers, GumbelHotLimitIsSupportAverage) {
  // As tau grows the softmax flattens, so every relaxed weight tends to the
  // plain average of the support values, which is 0 in both modes.
  Rng rng(9);
  for (WeightMode mode : {WeightMode::Ternary, WeightMode::Binary}) {
    const WeightDist dist = random_dist({4, 6}, mode, rng);
    GumbelKernel kernel({4, 6}, dist, Real(1e6));
    Rng noise(1);
    ForwardContext ctx{Mode::Diagnose, &noise};
    kernel.forward(random_tensor({6, 1}, rng), ctx);
    for (Real w : kernel.last_relaxed().data()) EXPECT_NEAR(w, 0, 1e-4);
  }
}

TEST(Layers, GumbelColdLimitAveragesToDistributionMean) {
  // Near tau = 0 each draw is a categorical sample (Gumbel-max), so the draw
  // average approaches the mean weight that the LR kernel propagates.
  Rng rng(19);
  const Tensor a = random_tensor({4, 6}, rng, -2, 2), b = random_tensor({4, 6}, rng, -2, 2);
  GumbelKernel kernel({4, 6}, TernaryDist{a, b}, Real(1e-4));
  Rng noise(4);
  ForwardContext ctx{Mode::Diagnose, &noise};
  const int draws = 4000;
  std::vector<double> sum(a.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    kernel.forward(Tensor({6, 1}, 1), ctx);
    for (std::size_t i = 0; i < a.size(); ++i) sum[i] += kernel.last_relaxed()[i];
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p0 = 1 / (1 + std::exp(-a[i])), pp = (1 - p0) / (1 + std::exp(-b[i])), pm = 1 - p0 - pp;
    const double mean = pp - pm, var = pp + pm - mean * mean;
    EXPECT_NEAR(sum[i] / draws, mean, 5 * std::sqrt(var / draws) + 1e-9) << "entry " << i;
  }
}

TEST(Layers, GumbelRelaxedWeightsInsideSupportHull) {
  Rng rng(10);
  const WeightDist dist = random_dist({16, 16}, WeightMode::Ternary, rng);
  for (Real tau : {Real(0.5), Real(1.0)}) {
    GumbelKernel kernel({16, 16}, dist, tau);
    Rng noise(2);
    ForwardContext ctx{Mode::Diagnose, &noise};
    for (int rep = 0; rep < 20; ++rep) {
      kernel.forward(Tensor({16, 1}, 1), ctx);
      for (Real w : kernel.last_relaxed().data()) {
        EXPECT_GT(w, -1);
        EXPECT_LT(w, 1);
      }
    }
  }
  // At a low temperature the softmax can round to a vertex; the hull is closed.
  GumbelKernel cold({16, 16}, dist, Real(0.1));
  Rng noise(3);
  ForwardContext ctx{Mode::Diagnose, &noise};
  cold.forward(Tensor({16, 1}, 1), ctx);
  for (Real w : cold.last_relaxed().data()) EXPECT_LE(std::abs(w), 1);
}

TEST(Layers, BatchNormGradients) {
  Rng rng(11);
  BatchNormLayer bn(3, Real(0.9), Real(1e-5));
  for (auto& p : bn.params()) *p.value = random_tensor(p.value->shape(), rng, 0.5, 1.5);
  check_layer_grads(bn, random_tensor({4, 3, 2, 2}, rng), 15, 1e-7);
}

TEST(Layers, BatchNormRunningStatistics) {
  BatchNormLayer bn(1, Real(0.5), Real(1e-5));
  Tensor x({4, 1}, {1, 2, 3, 4});
  ForwardContext train{Mode::Train, nullptr};
  bn.forward(x, train);
  // mean 2.5, unbiased variance 5/3
  EXPECT_NEAR(bn.running_mean()[0], 0.5 * 2.5, 1e-12);
  EXPECT_NEAR(bn.running_var()[0], 0.5 * 1 + 0.5 * (5.0 / 3.0), 1e-12);
  ForwardContext infer{Mode::Infer, nullptr};
  const Tensor y = bn.forward(x, infer);
  EXPECT_NEAR(y[0], (1 - 1.25) / std::sqrt(bn.running_var()[0] + 1e-5), 1e-12);
}

TEST(Layers, MaxPoolAndReluGradients) {
  Rng rng(12);
  MaxPool2Layer pool;
  check_layer_grads(pool, random_tensor({2, 2, 5, 4}, rng), 16, 1e-8);
  ReluLayer relu;
  check_layer_grads(relu, random_tensor({3, 7}, rng), 17, 1e-8);
}

TEST(Layers, MaxPoolFloorsOddSizes) {
  MaxPool2Layer pool;
  ForwardContext ctx{Mode::Infer, nullptr};
  const Tensor y = pool.forward(Tensor({1, 1, 3, 3}, {1, 2, 9, 3, 4, 9, 9, 9, 9}), ctx);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 4);
}

TEST(Layers, DropoutIsIdentityOutsideTraining) {
  DropoutLayer drop(Real(0.5));
  Rng rng(13);
  const Tensor x = random_tensor({4, 8}, rng);
  ForwardContext infer{Mode::Infer, nullptr};
  EXPECT_EQ(drop.forward(x, infer), x);
  ForwardContext train{Mode::Train, &rng};
  const Tensor y = drop.forward(x, train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_TRUE(y[i] == 0 || std::abs(y[i] - 2 * x[i]) < 1e-15);
}

TEST(Layers, SoftmaxCrossEntropyGradient) {
  Rng rng(14);
  Tensor logits = random_tensor({4, 5}, rng, -3, 3);
  const std::vector<int> labels = {0, 4, 2, 2};
  const LossResult res = softmax_cross_entropy(logits, labels);
  auto loss = [&]() { return static_cast<double>(softmax_cross_entropy(logits, labels).loss); };
  EXPECT_LT(rel_error(as_vector(res.grad), numeric_grad(logits, loss)), 1e-8);
  EXPECT_THROW(softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 7}), DimensionError);
}

namespace {

void check_network_grads(WeightScheme scheme, double tol) {
  NetworkConfig cfg;
  cfg.input = {2, 10, 10};
  cfg.conv = {{3, 3}};
  cfg.fc_width = 6;
  cfg.num_classes = 4;
  cfg.dropout = Real(0.25);
  cfg.scheme = scheme;
  Rng init(21);
  Network net(cfg, init);
  Rng data(22);
  const Tensor x = random_tensor({3, 2, 10, 10}, data);
  const std::vector<int> labels = {1, 3, 0};
  const Rng base(23);
  auto loss = [&]() {
    Rng rng = base;
    ForwardContext ctx{Mode::Train, &rng};
    return static_cast<double>(softmax_cross_entropy(net.forward(x, ctx), labels).loss);
  };
  // Running statistics move on every training forward; they do not affect the
  // training-mode output, so repeated evaluation is harmless.
  net.zero_grad();
  {
    Rng rng = base;
    ForwardContext ctx{Mode::Train, &rng};
    net.backward(softmax_cross_entropy(net.forward(x, ctx), labels).grad);
  }
  for (auto& p : net.params()) {
    const auto analytic = as_vector(*p.grad);
    EXPECT_LT(rel_error(analytic, numeric_grad(*p.value, loss)), tol) << p.name;
  }
}

}  // namespace

TEST(Network, FullPrecisionGradients) { check_network_grads(WeightScheme::FullPrecision, 1e-6); }
TEST(Network, LocalReparamGradients) { check_network_grads(WeightScheme::LocalReparam, 1e-6); }

TEST(Network, ParameterNamesAndStochasticLayers) {
  Rng init(1);
  Network net(NetworkConfig::desk_mnist(), init);
  const auto st = net.stochastic_layers();
  ASSERT_EQ(st.size(), 3u);
  EXPECT_EQ(st[0].layer_index, 0u);
  EXPECT_EQ(st[0].kernel->weight_shape(), (Shape{8, 1, 5, 5}));
  EXPECT_EQ(st[1].kernel->weight_shape(), (Shape{16, 8, 5, 5}));
  EXPECT_EQ(st[2].kernel->weight_shape(), (Shape{128, 256}));
  bool saw_final = false;
  for (const auto& p : net.params()) saw_final |= p.role == ParamRole::FinalWeight;
  EXPECT_TRUE(saw_final);
}
