#pragma once

// Online type-II maximum likelihood over the inverse-gamma hyperparameters
// (a, b) of each model, in log coordinates.

#include <cstddef>
#include <span>

#include "bocpdms/bvar.hpp"

namespace bocpdms {

struct HyperGradient {
  double d_log_a = 0.0;
  double d_log_b = 0.0;
};

struct HyperState {
  double log_a = 0.0;
  double log_b = 0.0;
  double a = 1.0;  // kept alongside the logs so an unmoved state round-trips exactly
  double b = 1.0;
  double alpha0 = 0.1;
  std::size_t steps = 0;
  std::size_t skipped = 0;

  static HyperState start(double a, double b, double alpha0);
};

// d log p / d(log a, log b) of a predictive whose run started from prior (a0, b0).
// The posterior shape is a0 + nS/2 and the scale b0 + (data terms), so the chain
// rule only needs the partials with respect to the posterior shape and scale.
HyperGradient predictive_gradient(const Predictive& p, double prior_shape, double prior_scale);

// Partials of student_t_logpdf with respect to shape and scale.
double dlogpdf_dshape(const Predictive& p);
double dlogpdf_dscale(const Predictive& p);

// One term of a log-mixture: log weight and the gradient of that log weight.
struct MixtureTerm {
  double log_weight;
  HyperGradient gradient;
};

struct Objective {
  double value;
  HyperGradient gradient;
};

// value = log sum_i exp(w_i), gradient = sum_i softmax(w)_i grad_i.
Objective mixture_objective(std::span<const MixtureTerm> terms);

// (log a, log b) += alpha0 / sqrt(steps) * grad. A non-finite gradient is
// skipped and counted; a zero increment leaves the state bit-identical.
void sgd_step(HyperState& state, const HyperGradient& grad);

}  // namespace bocpdms
