#pragma once

// Synthetic scenarios with planted changepoints, exhaustive oracles for small
// problems, and evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bocpdms/engine.hpp"

namespace bocpdms {

struct SegmentSpec {
  std::size_t start = 1;                      // first time index, 1-based
  std::string label;
  std::vector<Eigen::MatrixXd> coefficients;  // A_1..A_L, each S x S
  Eigen::VectorXd intercept;                  // empty means zero
  double noise_sd = 1.0;
};

struct ScenarioSpec {
  std::size_t locations = 1;
  std::size_t grid_rows = 0;  // 0 when locations are not on a grid
  std::size_t grid_cols = 0;
  std::vector<double> radii;
  std::size_t length = 0;     // T
  std::uint64_t seed = 0;
  std::size_t burn_in = 100;  // discarded steps generated by the first segment
  std::vector<SegmentSpec> segments;

  void validate() const;
};

// Reads a scenario from JSON text. Segments give either "matrices" (one S x S
// matrix per lag) or "ring_weights" (per lag, one weight per ring 0..n of the
// grid neighbourhood system built from "grid" and "radii").
ScenarioSpec parse_scenario(const std::string& json_text);
ScenarioSpec load_scenario(const std::string& path);

struct Simulation {
  Eigen::MatrixXd series;  // T x S
  Segmentation truth;      // model_id is the segment index
};

// Spectral radius of the VAR companion matrix.
double spectral_radius(const std::vector<Eigen::MatrixXd>& coefficients);

Simulation simulate(const ScenarioSpec& spec);

// Exhaustive sum over segmentations of t0..T (t0 = common lag + 1) and model
// assignments under product-partition semantics. Refuses T > 12.
double brute_force_evidence(const Eigen::MatrixXd& series, const ModelUniverse& universe,
                            const HazardSpec& hazard);

struct BruteForceMap {
  double log_density;
  Segmentation segmentation;
};

// Highest-density segmentation under the same enumeration.
BruteForceMap brute_force_map(const Eigen::MatrixXd& series, const ModelUniverse& universe,
                              const HazardSpec& hazard);

struct MetricSummary {
  double mse = 0.0;
  double mse_half_width = 0.0;  // 1.96 standard errors
  double nll = 0.0;
  double nll_half_width = 0.0;
  std::size_t count = 0;
};

// Per-step squared error is averaged over locations; log_densities are the
// predictive log densities of the actuals.
MetricSummary metrics(std::span<const Eigen::VectorXd> predictions, std::span<const Eigen::VectorXd> actuals,
                      std::span<const double> log_densities);

// Constant-memory form of metrics() for streams.
class MetricAccumulator {
 public:
  void add(const Eigen::VectorXd& prediction, const Eigen::VectorXd& actual, double log_density);
  std::size_t count() const { return n_; }
  MetricSummary summary() const;

 private:
  std::size_t n_ = 0;
  double se_mean_ = 0.0;
  double se_m2_ = 0.0;
  double nll_mean_ = 0.0;
  double nll_m2_ = 0.0;
};

double gaussian_logpdf(double x, double mean, double variance);

struct SgvPoint {
  double sgv = 0.0;          // |M|-th root of det of the one-hot sample covariance
  double reduced_sgv = 0.0;  // same with the last category dropped, (|M|-1)-th root
  double log_sgv = 0.0;      // -inf when sgv == 0
  bool shortened = false;    // fewer than W steps were available
};

// model_posteriors[t] is p(m | y_{1:t}); the window ends at t.
std::vector<SgvPoint> sgv_trace(const std::vector<std::vector<double>>& model_posteriors, std::size_t window);

// Sliding-window form of sgv_trace(): push p(m | y_{1:t}) once per step.
class SgvWindow {
 public:
  explicit SgvWindow(std::size_t window);
  SgvPoint push(std::span<const double> model_posterior);

 private:
  std::size_t window_;
  std::size_t models_ = 0;
  std::deque<std::size_t> argmax_;
};

}  // namespace bocpdms
