#pragma once

#include <string>
#include <variant>

#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace lrnet {

enum class WeightMode { Binary, Ternary };

std::string to_string(WeightMode mode);
WeightMode parse_weight_mode(const std::string& text);

/// Per-weight distribution over {-1, 0, +1}:
///   p(w = 0) = sigmoid(a),  p(w = +1 | w != 0) = sigmoid(b).
struct TernaryDist {
  Tensor a;
  Tensor b;
};

/// Per-weight distribution over {-1, +1} with p(w = +1) = sigmoid(b).
struct BinaryDist {
  Tensor b;
};

using WeightDist = std::variant<TernaryDist, BinaryDist>;

WeightMode mode_of(const WeightDist& dist);
const Shape& shape_of(const WeightDist& dist);

struct Moments {
  Tensor mean;
  Tensor var;
};

Moments moments(const TernaryDist& dist);
Moments moments(const BinaryDist& dist);
Moments moments(const WeightDist& dist);

/// Chain rule from moment gradients to logit gradients. `grad_a` is left
/// untouched for binary distributions. Results are added to the outputs.
void accumulate_logit_grads(const WeightDist& dist, const Tensor& grad_mean, const Tensor& grad_var, Tensor& grad_a,
                            Tensor& grad_b);

/// Per-weight outcome probabilities, each tensor shaped like the weight.
struct OutcomeProbs {
  Tensor minus;
  Tensor zero;
  Tensor plus;
};

OutcomeProbs outcome_probs(const WeightDist& dist);

struct InitConfig {
  Real p_min = Real(0.05);
  Real p_max = Real(0.95);
  WeightMode mode = WeightMode::Ternary;

  /// Throws ConfigError unless 0 < p_min < p_max < 1.
  void validate() const;
};

/// Divides a layer's weights by their population standard deviation.
Tensor normalize_pretrained(const Tensor& weights);
Real population_std(const Tensor& weights);

/// Distribution whose mean reproduces `normalized` where no clipping is needed.
WeightDist init_from_pretrained(const Tensor& normalized, const InitConfig& cfg);

/// Independent discrete draw per weight; entries are exactly -1, 0 or +1.
Tensor sample_weights(const WeightDist& dist, Rng& rng);

/// Most probable value per weight (ties resolve to 0, then +1).
Tensor mode_weights(const WeightDist& dist);

/// Shannon entropy per weight, in bits.
Tensor entropy(const WeightDist& dist);

struct PenaltyResult {
  Real value = 0;
  Tensor grad_a;  // empty for binary distributions
  Tensor grad_b;
};

/// Sum of squared logits, sum(a^2 + b^2), and its gradient (2a, 2b).
PenaltyResult probability_decay_penalty(const WeightDist& dist);

/// Beta-density regularizer sum p^(alpha-1) (1-p)^(beta-1) with p = sigmoid(b),
/// and its gradient with respect to b.
PenaltyResult beta_penalty(const BinaryDist& dist, Real alpha, Real beta);

Real sigmoid(Real x);
Real logit(Real p);

}  // namespace lrnet
