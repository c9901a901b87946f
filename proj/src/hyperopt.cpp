#include "bocpdms/hyperopt.hpp"

#include <cmath>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "bocpdms/errors.hpp"
#include "bocpdms/logmath.hpp"

namespace bocpdms {

HyperState HyperState::start(double a, double b, double alpha0) {
  if (!(a > 0.0) || !(b > 0.0)) throw ArgumentError("hyperparameters a and b must be positive");
  if (!(alpha0 >= 0.0) || !std::isfinite(alpha0)) throw ArgumentError("alpha0 must be finite and non-negative");
  HyperState s;
  s.a = a;
  s.b = b;
  s.log_a = std::log(a);
  s.log_b = std::log(b);
  s.alpha0 = alpha0;
  return s;
}

double dlogpdf_dshape(const Predictive& p) {
  const double half_dim = 0.5 * static_cast<double>(p.dim);
  return boost::math::digamma(p.shape + half_dim) - boost::math::digamma(p.shape) -
         std::log1p(p.mahalanobis / (2.0 * p.scale));
}

double dlogpdf_dscale(const Predictive& p) {
  const double half_dim = 0.5 * static_cast<double>(p.dim);
  return -half_dim / p.scale + (p.shape + half_dim) * p.mahalanobis / (p.scale * (2.0 * p.scale + p.mahalanobis));
}

HyperGradient predictive_gradient(const Predictive& p, double prior_shape, double prior_scale) {
  return {prior_shape * dlogpdf_dshape(p), prior_scale * dlogpdf_dscale(p)};
}

Objective mixture_objective(std::span<const MixtureTerm> terms) {
  if (terms.empty()) throw ArgumentError("mixture objective needs at least one term");
  std::vector<double> w;
  w.reserve(terms.size());
  for (const auto& t : terms) w.push_back(t.log_weight);
  Objective out{log_sum_exp(w), {}};
  if (!std::isfinite(out.value)) return out;
  for (const auto& t : terms) {
    if (t.log_weight == kNegInf) continue;
    const double p = std::exp(t.log_weight - out.value);
    out.gradient.d_log_a += p * t.gradient.d_log_a;
    out.gradient.d_log_b += p * t.gradient.d_log_b;
  }
  return out;
}

void sgd_step(HyperState& state, const HyperGradient& grad) {
  if (!std::isfinite(grad.d_log_a) || !std::isfinite(grad.d_log_b)) {
    ++state.skipped;
    return;
  }
  ++state.steps;
  const double rate = state.alpha0 / std::sqrt(static_cast<double>(state.steps));
  const double da = rate * grad.d_log_a;
  const double db = rate * grad.d_log_b;
  if (da != 0.0) {
    state.log_a += da;
    state.a = std::exp(state.log_a);
  }
  if (db != 0.0) {
    state.log_b += db;
    state.b = std::exp(state.log_b);
  }
}

}  // namespace bocpdms
