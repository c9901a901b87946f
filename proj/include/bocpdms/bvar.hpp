#pragma once

// Conjugate Bayesian vector autoregression:
//   sigma^2 ~ InvGamma(a, b),  c | sigma^2 ~ N(0, sigma^2 g I),
//   y_t | c, sigma^2 ~ N(X_t c, sigma^2 Omega),  Omega diagonal.
//
// Coefficients are split into blocks that never share an equation row (one
// block per location unless coefficients are pooled across locations), so the
// precision matrix is block diagonal and each block keeps its own Cholesky
// factor. The scale accumulator couples the blocks through sigma^2.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bocpdms {

struct BvarPrior {
  double a = 1.0;
  double b = 1.0;
  double g = 1.0;              // V_c = g I
  std::vector<double> omega;   // diagonal of Omega; empty means all ones

  void validate(std::size_t locations) const;
  double omega_at(std::size_t s) const { return omega.empty() ? 1.0 : omega[s]; }
};

struct BlockStructure {
  std::size_t locations = 0;
  std::size_t coefficients = 0;
  std::vector<std::size_t> location_block;
  std::vector<std::vector<std::size_t>> block_locations;
  std::vector<std::vector<std::size_t>> block_coefficients;  // local -> global id
  // row_local[s][j]: block-local position of the j-th regressor of row s.
  std::vector<std::vector<std::size_t>> row_local;

  // row_coefficients[s] lists the global coefficient of each regressor of row s.
  static BlockStructure from_rows(const std::vector<std::vector<std::size_t>>& row_coefficients,
                                  std::size_t num_coefficients);
  // One block holding k coefficients shared by `locations` identical rows.
  static BlockStructure single(std::size_t k, std::size_t locations = 1);

  std::size_t num_blocks() const { return block_locations.size(); }
  std::size_t block_dim(std::size_t b) const { return block_coefficients[b].size(); }
};

// One time step's regressors, row s scattered into its block-local coordinates.
struct BlockDesign {
  std::vector<double> values;
  std::vector<std::size_t> offset;  // start of row s in values

  std::span<const double> row(const BlockStructure& structure, std::size_t s) const {
    return {values.data() + offset[s], structure.block_dim(structure.location_block[s])};
  }
  // rows[s] holds row s's regressors in the layout order used by from_rows().
  static BlockDesign scatter(const BlockStructure& structure,
                             const std::vector<std::vector<double>>& rows);
  static BlockDesign scatter(const BlockStructure& structure, std::span<const double> flat_rows);
};

struct StatsBlock {
  Eigen::MatrixXd precision_factor;  // lower Cholesky factor of X'Omega^-1 X + I/g
  Eigen::VectorXd cross_moment;      // X'Omega^-1 y
};

struct SufficientStatistics {
  std::vector<StatsBlock> blocks;
  double shape = 0.0;        // a + n S / 2
  double scale = 0.0;        // b + (y'Omega^-1 y - W'P^-1 W) / 2
  double prior_shape = 0.0;  // a and b this hypothesis was born with
  double prior_scale = 0.0;
  std::size_t n_obs = 0;

  std::size_t k() const;
};

// Multivariate Student-t with 2 A degrees of freedom, location X c_MAP and
// scale (B / A) (Omega + X P^-1 X').
struct Predictive {
  double log_pdf = 0.0;
  double mahalanobis = 0.0;    // e' (Omega + X P^-1 X')^-1 e
  double log_det_scale = 0.0;  // log |Omega + X P^-1 X'|
  double shape = 0.0;
  double scale = 0.0;
  std::size_t dim = 0;
};

struct PredictiveMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  bool covariance_finite = true;  // false: df <= 2, covariance holds the scale matrix
};

SufficientStatistics init_stats(const BvarPrior& prior, const BlockStructure& structure);

Predictive predictive_logpdf(const SufficientStatistics& stats, const BlockStructure& structure,
                             const BvarPrior& prior, const BlockDesign& x, std::span<const double> y);

void update_stats(SufficientStatistics& stats, const BlockStructure& structure, const BvarPrior& prior,
                  const BlockDesign& x, std::span<const double> y);

// predictive_logpdf followed by update_stats, sharing the residual work.
Predictive observe(SufficientStatistics& stats, const BlockStructure& structure, const BvarPrior& prior,
                   const BlockDesign& x, std::span<const double> y);

PredictiveMoments predictive_moments(const SufficientStatistics& stats, const BlockStructure& structure,
                                     const BvarPrior& prior, const BlockDesign& x);

// Posterior mode of c in global coefficient order.
Eigen::VectorXd map_coefficients(const SufficientStatistics& stats, const BlockStructure& structure);

// Inverse of the precision matrix, assembled in global coefficient order.
Eigen::MatrixXd posterior_covariance_factor(const SufficientStatistics& stats,
                                            const BlockStructure& structure);

// log Student-t density from its sufficient pieces; also used for derivatives.
double student_t_logpdf(double shape, double scale, double mahalanobis, double log_det_scale,
                        std::size_t dim);

// Batch (non-incremental) construction from stacked designs, global order.
struct BatchPosterior {
  Eigen::MatrixXd precision;
  Eigen::VectorXd cross_moment;
  double shape = 0.0;
  double scale = 0.0;
  std::size_t n_obs = 0;
};

Eigen::MatrixXd global_design(const BlockStructure& structure, const BlockDesign& x);

BatchPosterior batch_posterior(const BvarPrior& prior, const BlockStructure& structure,
                               std::span<const BlockDesign> designs,
                               std::span<const std::vector<double>> ys);

// log p(y_{1:n}) from the closed-form normal-inverse-gamma normaliser.
double batch_log_marginal(const BvarPrior& prior, const BlockStructure& structure,
                          std::span<const BlockDesign> designs, std::span<const std::vector<double>> ys);

}  // namespace bocpdms
