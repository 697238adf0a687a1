#include "lrnet/dist.hpp"

#include <algorithm>
#include <cmath>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

inline Real xlog2x(Real p) { return p > 0 ? p * std::log2(p) : Real(0); }

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

Real logit(Real p) { return std::log(p) - std::log1p(-p); }

std::string to_string(WeightMode mode) { return mode == WeightMode::Binary ? "binary" : "ternary"; }

WeightMode parse_weight_mode(const std::string& text) {
  if (text == "binary") return WeightMode::Binary;
  if (text == "ternary") return WeightMode::Ternary;
  throw ConfigError("mode must be 'binary' or 'ternary', got '" + text + "'");
}

WeightMode mode_of(const WeightDist& dist) {
  return std::holds_alternative<BinaryDist>(dist) ? WeightMode::Binary : WeightMode::Ternary;
}

const Shape& shape_of(const WeightDist& dist) {
  return std::visit([](const auto& d) -> const Shape& { return d.b.shape(); }, dist);
}

Moments moments(const TernaryDist& dist) {
  require_same_shape(dist.a, dist.b, "ternary distribution");
  Moments m{Tensor(dist.a.shape()), Tensor(dist.a.shape())};
  for (std::size_t i = 0; i < dist.a.size(); ++i) {
    const Real nonzero = sigmoid(-dist.a[i]);
    const Real sign_bias = std::tanh(dist.b[i] / 2);  // 2*sigmoid(b) - 1
    const Real mu = nonzero * sign_bias;
    m.mean[i] = mu;
    // E[w^2] - mu^2 = nonzero - nonzero^2 t^2, factored to stay non-negative.
    m.var[i] = nonzero * (Real(1) - nonzero * sign_bias * sign_bias);
  }
  return m;
}

Moments moments(const BinaryDist& dist) {
  Moments m{Tensor(dist.b.shape()), Tensor(dist.b.shape())};
  for (std::size_t i = 0; i < dist.b.size(); ++i) {
    const Real p = sigmoid(dist.b[i]);
    m.mean[i] = std::tanh(dist.b[i] / 2);
    m.var[i] = Real(4) * p * (Real(1) - p);
  }
  return m;
}

Moments moments(const WeightDist& dist) {
  return std::visit([](const auto& d) { return moments(d); }, dist);
}

void accumulate_logit_grads(const WeightDist& dist, const Tensor& grad_mean, const Tensor& grad_var, Tensor& grad_a,
                            Tensor& grad_b) {
  if (const auto* t = std::get_if<TernaryDist>(&dist)) {
    for (std::size_t i = 0; i < t->a.size(); ++i) {
      const Real q = sigmoid(t->a[i]);
      const Real nonzero = sigmoid(-t->a[i]);
      const Real r = sigmoid(t->b[i]);
      const Real sign_bias = std::tanh(t->b[i] / 2);
      const Real mu = nonzero * sign_bias;
      const Real dmu_da = -q * nonzero * sign_bias;
      const Real dmu_db = nonzero * Real(2) * r * (Real(1) - r);
      const Real dvar_da = -q * nonzero - Real(2) * mu * dmu_da;
      const Real dvar_db = -Real(2) * mu * dmu_db;
      grad_a[i] += grad_mean[i] * dmu_da + grad_var[i] * dvar_da;
      grad_b[i] += grad_mean[i] * dmu_db + grad_var[i] * dvar_db;
    }
    return;
  }
  const auto& bd = std::get<BinaryDist>(dist);
  for (std::size_t i = 0; i < bd.b.size(); ++i) {
    const Real r = sigmoid(bd.b[i]);
    const Real dmu_db = Real(2) * r * (Real(1) - r);
    const Real dvar_db = -Real(2) * std::tanh(bd.b[i] / 2) * dmu_db;
    grad_b[i] += grad_mean[i] * dmu_db + grad_var[i] * dvar_db;
  }
}

OutcomeProbs outcome_probs(const WeightDist& dist) {
  const Shape& shape = shape_of(dist);
  OutcomeProbs p{Tensor(shape), Tensor(shape), Tensor(shape)};
  if (const auto* t = std::get_if<TernaryDist>(&dist)) {
    for (std::size_t i = 0; i < t->a.size(); ++i) {
      const Real nonzero = sigmoid(-t->a[i]);
      p.zero[i] = sigmoid(t->a[i]);
      p.plus[i] = nonzero * sigmoid(t->b[i]);
      p.minus[i] = nonzero * sigmoid(-t->b[i]);
    }
  } else {
    const auto& bd = std::get<BinaryDist>(dist);
    for (std::size_t i = 0; i < bd.b.size(); ++i) {
      p.plus[i] = sigmoid(bd.b[i]);
      p.minus[i] = sigmoid(-bd.b[i]);
    }
  }
  return p;
}

void InitConfig::validate() const {
  if (!(p_min > 0 && p_min < p_max && p_max < 1)) {
    throw ConfigError("init requires 0 < p_min < p_max < 1, got p_min=" + std::to_string(p_min) +
                      " p_max=" + std::to_string(p_max));
  }
}

Real population_std(const Tensor& w) {
  if (w.size() < 2) throw DimensionError("standard deviation needs at least 2 weights");
  const Real mu = mean(w);
  Real ss = 0;
  for (Real v : w.data()) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<Real>(w.size()));
}

Tensor normalize_pretrained(const Tensor& w) {
  const Real sd = population_std(w);
  if (!(sd > 0)) throw DimensionError("degenerate layer: weights have zero standard deviation");
  return map(w, [sd](Real v) { return v / sd; });
}

WeightDist init_from_pretrained(const Tensor& w, const InitConfig& cfg) {
  cfg.validate();
  auto clip = [&](Real p) { return std::clamp(p, cfg.p_min, cfg.p_max); };
  if (cfg.mode == WeightMode::Binary) {
    return BinaryDist{map(w, [&](Real v) { return logit(clip(Real(0.5) * (Real(1) + v))); })};
  }
  TernaryDist d{Tensor(w.shape()), Tensor(w.shape())};
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Real p_zero = clip(cfg.p_max - (cfg.p_max - cfg.p_min) * std::abs(w[i]));
    const Real p_plus = clip(Real(0.5) * (Real(1) + w[i] / (Real(1) - p_zero)));
    d.a[i] = logit(p_zero);
    d.b[i] = logit(p_plus);
  }
  return d;
}

Tensor sample_weights(const WeightDist& dist, Rng& rng) {
  const Shape& shape = shape_of(dist);
  Tensor u(shape);
  rng.fill_uniform(u.data());
  Tensor w(shape);
  if (const auto* t = std::get_if<TernaryDist>(&dist)) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Real p_zero = sigmoid(t->a[i]);
      const Real p_plus = sigmoid(-t->a[i]) * sigmoid(t->b[i]);
      w[i] = u[i] < p_zero ? Real(0) : (u[i] < p_zero + p_plus ? Real(1) : Real(-1));
    }
  } else {
    const auto& bd = std::get<BinaryDist>(dist);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = u[i] < sigmoid(bd.b[i]) ? Real(1) : Real(-1);
  }
  return w;
}

Tensor mode_weights(const WeightDist& dist) {
  const OutcomeProbs p = outcome_probs(dist);
  Tensor w(p.zero.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (p.zero[i] >= p.plus[i] && p.zero[i] >= p.minus[i]) {
      w[i] = 0;
    } else {
      w[i] = p.plus[i] >= p.minus[i] ? Real(1) : Real(-1);
    }
  }
  return w;
}

Tensor entropy(const WeightDist& dist) {
  const OutcomeProbs p = outcome_probs(dist);
  Tensor h(p.zero.shape());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = -(xlog2x(p.minus[i]) + xlog2x(p.zero[i]) + xlog2x(p.plus[i]));
  return h;
}

PenaltyResult probability_decay_penalty(const WeightDist& dist) {
  PenaltyResult out;
  auto add = [&out](const Tensor& logits, Tensor& grad) {
    grad = Tensor(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      out.value += logits[i] * logits[i];
      grad[i] = Real(2) * logits[i];
    }
  };
  if (const auto* t = std::get_if<TernaryDist>(&dist)) {
    add(t->a, out.grad_a);
    add(t->b, out.grad_b);
  } else {
    add(std::get<BinaryDist>(dist).b, out.grad_b);
  }
  return out;
}

PenaltyResult beta_penalty(const BinaryDist& dist, Real alpha, Real beta) {
  if (alpha < 1 || beta < 1) throw ConfigError("beta penalty requires alpha, beta >= 1");
  PenaltyResult out;
  out.grad_b = Tensor(dist.b.shape());
  for (std::size_t i = 0; i < dist.b.size(); ++i) {
    const Real p = sigmoid(dist.b[i]);
    const Real q = sigmoid(-dist.b[i]);
    out.value += std::pow(p, alpha - 1) * std::pow(q, beta - 1);
    // dR/db = p q dR/dp, multiplied through so no negative powers appear.
    out.grad_b[i] = (alpha - 1) * std::pow(p, alpha - 1) * std::pow(q, beta) -
                    (beta - 1) * std::pow(p, alpha) * std::pow(q, beta - 1);
  }
  return out;
}

}  // namespace lrnet
