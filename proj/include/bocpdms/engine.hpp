#pragma once

// Joint run-length / model posterior recursion with pruning, prediction, MAP
// segmentation and online hyperparameter ascent.

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bocpdms/bvar.hpp"
#include "bocpdms/hyperopt.hpp"
#include "bocpdms/model.hpp"
#include "bocpdms/spatial.hpp"

namespace bocpdms {

struct HazardSpec {
  double lambda = 100.0;

  void validate() const;
  double h() const { return 1.0 / lambda; }
  double log_h() const;
  double log_1mh() const;  // -inf when lambda == 1
};

enum class RecursionMode {
  paper,   // growth terms carry the conditional model posterior q(m | r)
  strict,  // product-partition semantics: that factor is 1
};

RecursionMode parse_mode(const std::string& name);
std::string to_string(RecursionMode mode);

struct ModelUniverse {
  std::vector<ModelSpec> members;
  std::vector<double> prior_q;  // empty means uniform

  void validate() const;
  double q(std::size_t m) const;
};

struct HyperoptConfig {
  bool enabled = false;
  double alpha0 = 0.1;
};

struct EngineConfig {
  HazardSpec hazard;
  RecursionMode mode = RecursionMode::paper;
  std::size_t r_max = 0;    // 0 disables pruning
  std::size_t horizon = 1;  // forecasts for 1..horizon after every step
  HyperoptConfig hyperopt;
  bool track_gradients = false;  // also implied by hyperopt.enabled
  std::size_t threads = 1;       // model-parallel workers for the per-model stage
};

struct RunLengthEntry {
  std::size_t run_length = 0;
  double log_joint = 0.0;       // log p(y_{1:t}, r_t, m_t)
  double log_cond = 0.0;        // log q(m | y_{1:t}, r_t), set by aggregate
  double segment_loglik = 0.0;  // sum of this run's own predictive log densities
  SufficientStatistics stats;
  std::vector<double> gradient;  // d log_joint / d(log a_m', log b_m'), interleaved per model
};

struct RunLengthGrid {
  std::size_t model_id = 0;
  bool active = false;
  std::vector<RunLengthEntry> entries;  // run lengths strictly increasing
};

struct Segment {
  std::size_t cp_time;  // first time index of the segment
  std::size_t model_id;
};

struct Segmentation {
  std::vector<Segment> entries;  // entries[0] starts the stream; the rest are changepoints
  double log_map_density = 0.0;

  std::size_t changepoints() const { return entries.empty() ? 0 : entries.size() - 1; }
};

struct Forecast {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  bool covariance_finite = true;
};

struct JointCell {
  std::size_t model_id;
  std::size_t run_length;
  double probability;
};

struct RunLengthProbability {
  std::size_t run_length;
  double probability;
};

struct StepOutput {
  std::size_t t = 0;
  double log_evidence = 0.0;
  std::vector<bool> active;
  std::vector<JointCell> joint_posterior;  // (5b), ordered by model then run length
  std::vector<double> model_posterior;     // (5c), 0 for inactive models
  std::vector<std::vector<RunLengthProbability>> model_rld;  // (5d)
  std::vector<RunLengthProbability> global_rld;              // (5e), ascending run length
  std::vector<Forecast> forecasts;                           // horizons 1..h_max for y_{t+1..}
  Segmentation map;
  bool new_changepoint = false;  // the MAP segmentation's latest changepoint moved this step

  // One-step diagnostics for y_t against the previous step's forecast.
  bool has_one_step = false;
  double one_step_log_density = 0.0;  // Eq. (8) mixture density at y_t
  Eigen::VectorXd one_step_error;     // y_t minus the previous mean forecast

  // Hyperparameter state after this step, the objective of the update and its
  // gradient (both zero before a model's second active step).
  std::vector<HyperState> hyper;
  std::vector<double> hyper_objective;
  std::vector<HyperGradient> hyper_gradient;
  std::vector<double> log_evidence_gradient;  // d log p(y_{1:t}) / d(log a_m, log b_m)
};

// Raised when every hypothesis has zero mass; carries the last valid output.
class NumericalCollapse : public std::runtime_error {
 public:
  NumericalCollapse(const std::string& message, std::size_t t, std::shared_ptr<const StepOutput> last)
      : std::runtime_error(message), t_(t), last_(std::move(last)) {}
  std::size_t t() const noexcept { return t_; }
  const StepOutput* last_valid() const noexcept { return last_.get(); }

 private:
  std::size_t t_;
  std::shared_ptr<const StepOutput> last_;
};

// Building blocks of one step, usable on their own.

// Eq. (4a): log_pred + log_joint + log(1 - H) [+ log q(m | r_{t-1}) in paper mode].
double growth_log_joint(double log_pred, double log_joint, const HazardSpec& hazard, double log_cond,
                        RecursionMode mode);
// Eq. (4b) under constant hazard: log_pred0 + log q(m) + log H + log sum of all parents.
double cp_log_joint(double log_pred0, double log_q, const HazardSpec& hazard, std::span<const double> parents);

struct BayesFactor {
  double value;
  bool saturated;  // p(m2 | y) == 0
};
BayesFactor bayes_factor(std::span<const double> model_posterior, std::span<const double> prior_q,
                         std::size_t m1, std::size_t m2);

// Keeps the r_max largest log joints (ties to the shorter run) plus r = 0.
void prune(RunLengthGrid& grid, std::size_t r_max);

class MapTracker {
 public:
  // Adds MAP_t from the grids at time t; `first_active` is the first time any
  // model was active. Returns the maximiser's segmentation.
  void update(std::size_t t, std::size_t first_active, const std::vector<RunLengthGrid>& grids,
              const HazardSpec& hazard, const ModelUniverse& universe);
  Segmentation segmentation() const;
  double log_density() const { return current_.log_density; }
  std::size_t stored() const { return history_.size(); }

 private:
  struct Node {
    Segment segment;
    std::shared_ptr<const Node> parent;
  };
  struct Record {
    double log_density = 0.0;
    std::shared_ptr<const Node> node;
  };
  std::vector<std::pair<std::size_t, Record>> history_;  // ascending time
  Record current_;

  const Record* find(std::size_t time) const;
};

class Engine {
 public:
  Engine(ModelUniverse universe, EngineConfig config, std::size_t locations, std::size_t exogenous = 0);

  // Processes y_t (and exogenous z_t) for t = time() + 1.
  const StepOutput& step(std::span<const double> y, std::span<const double> z = {});

  std::size_t time() const { return t_; }
  std::size_t locations() const { return locations_; }
  const StepOutput& last() const;
  const std::vector<RunLengthGrid>& grids() const { return grids_; }
  const std::vector<Model>& models() const { return models_; }
  const ModelUniverse& universe() const { return universe_; }
  const EngineConfig& config() const { return config_; }
  const HyperState& hyper(std::size_t m) const { return hyper_.at(m); }
  std::size_t retained() const;
  std::size_t map_records() const { return map_.stored(); }

  // Eq. (8) forecasts for horizons 1..h_max from the current posterior.
  std::vector<Forecast> forecast(std::size_t h_max) const;

 private:
  struct ModelStep;
  struct StepContext;

  ModelUniverse universe_;
  EngineConfig config_;
  std::size_t locations_;
  std::size_t exogenous_;
  std::vector<Model> models_;
  std::vector<HyperState> hyper_;
  std::vector<RunLengthGrid> grids_;
  History history_;
  std::vector<double> last_z_;
  MapTracker map_;
  std::size_t t_ = 0;
  std::size_t first_active_ = 0;
  double log_evidence_ = 0.0;
  bool any_active_ = false;
  bool failed_ = false;
  std::shared_ptr<StepOutput> last_;

  bool gradients() const { return config_.track_gradients || config_.hyperopt.enabled; }
  void run_model(std::size_t m, const StepContext& ctx, ModelStep& out);
  void aggregate(StepOutput& out);
};

}  // namespace bocpdms
