#include "bocpdms/bvar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>

#include "bocpdms/errors.hpp"
#include "bocpdms/kernels.hpp"

namespace bocpdms {
namespace {

// In-place solve L z = z for lower-triangular, column-major L.
void forward_solve(const Eigen::MatrixXd& factor, double* z) {
  const auto& kt = kernels::active();
  const auto k = static_cast<std::size_t>(factor.rows());
  const double* base = factor.data();
  for (std::size_t j = 0; j < k; ++j) {
    const double* col = base + j * k;
    z[j] /= col[j];
    if (j + 1 < k && z[j] != 0.0) kt.axpy(-z[j], col + j + 1, z + j + 1, k - j - 1);
  }
}

// In-place solve L' c = c.
void backward_solve_transposed(const Eigen::MatrixXd& factor, double* c) {
  const auto& kt = kernels::active();
  const auto k = static_cast<std::size_t>(factor.rows());
  const double* base = factor.data();
  for (std::size_t i = k; i-- > 0;) {
    const double* col = base + i * k;
    const double tail = i + 1 < k ? kt.dot(col + i + 1, c + i + 1, k - i - 1) : 0.0;
    c[i] = (c[i] - tail) / col[i];
  }
}

// L L' + w w' -> L L'; w is destroyed.
void cholesky_rank1_update(Eigen::MatrixXd& factor, double* w) {
  const auto& kt = kernels::active();
  const auto k = static_cast<std::size_t>(factor.rows());
  double* base = factor.data();
  for (std::size_t j = 0; j < k; ++j) {
    if (w[j] == 0.0) continue;
    double* col = base + j * k;
    const double diag = col[j];
    const double r = std::hypot(diag, w[j]);
    const double c = r / diag;
    const double s = w[j] / diag;
    col[j] = r;
    if (j + 1 < k) kt.givens_column(col + j + 1, w + j + 1, k - j - 1, c, s);
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double d = base[j * k + j];
    if (!(d > 0.0) || !std::isfinite(d)) throw NumericalError("Cholesky rank-1 update lost positive definiteness");
  }
}

struct Scratch {
  std::vector<double> coef;
  std::vector<double> z;
  std::vector<double> residual;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

// Factor a small scale block, retrying once with diagonal jitter.
Eigen::LLT<Eigen::MatrixXd> factor_scale(Eigen::MatrixXd sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * sigma.trace() / static_cast<double>(sigma.rows());
  sigma.diagonal().array() += jitter;
  llt.compute(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("predictive scale matrix is not positive definite");
  return llt;
}

void check_dims(const SufficientStatistics& stats, const BlockStructure& structure, const BlockDesign& x,
                std::span<const double> y) {
  if (stats.blocks.size() != structure.num_blocks()) throw ArgumentError("statistics do not match block structure");
  if (y.size() != structure.locations) throw ArgumentError("observation has the wrong dimension");
  if (x.offset.size() != structure.locations) throw ArgumentError("design has the wrong number of rows");
}

struct ResidualSummary {
  double mahalanobis = 0.0;
  double log_det = 0.0;
};

ResidualSummary residual_summary(const SufficientStatistics& stats, const BlockStructure& structure,
                                 const BvarPrior& prior, const BlockDesign& x, std::span<const double> y) {
  const auto& kt = kernels::active();
  Scratch& buf = scratch();
  ResidualSummary out;
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    const StatsBlock& block = stats.blocks[b];
    const std::size_t k = structure.block_dim(b);
    const auto& locs = structure.block_locations[b];
    const std::size_t m = locs.size();
    buf.coef.assign(block.cross_moment.data(), block.cross_moment.data() + k);
    forward_solve(block.precision_factor, buf.coef.data());
    backward_solve_transposed(block.precision_factor, buf.coef.data());
    buf.z.resize(m * k);
    buf.residual.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      const auto row = x.row(structure, locs[j]);
      buf.residual[j] = y[locs[j]] - kt.dot(row.data(), buf.coef.data(), k);
      std::copy(row.begin(), row.end(), buf.z.begin() + static_cast<std::ptrdiff_t>(j * k));
      forward_solve(block.precision_factor, buf.z.data() + j * k);
    }
    if (m == 1) {
      const double sigma = prior.omega_at(locs[0]) + kt.dot(buf.z.data(), buf.z.data(), k);
      out.mahalanobis += buf.residual[0] * buf.residual[0] / sigma;
      out.log_det += std::log(sigma);
      continue;
    }
    Eigen::MatrixXd sigma(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double v = kt.dot(buf.z.data() + i * k, buf.z.data() + j * k, k);
        if (i == j) v += prior.omega_at(locs[i]);
        sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        sigma(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
      }
    }
    const auto llt = factor_scale(sigma);
    Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(buf.residual.data(), static_cast<Eigen::Index>(m));
    llt.matrixL().solveInPlace(e);
    out.mahalanobis += e.squaredNorm();
    const Eigen::MatrixXd lower = llt.matrixL();
    out.log_det += 2.0 * lower.diagonal().array().log().sum();
  }
  return out;
}

void absorb(SufficientStatistics& stats, const BlockStructure& structure, const BvarPrior& prior,
            const BlockDesign& x, std::span<const double> y, double mahalanobis) {
  const auto& kt = kernels::active();
  Scratch& buf = scratch();
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    StatsBlock& block = stats.blocks[b];
    const std::size_t k = structure.block_dim(b);
    for (std::size_t s : structure.block_locations[b]) {
      const auto row = x.row(structure, s);
      const double inv_omega = 1.0 / prior.omega_at(s);
      kt.axpy(y[s] * inv_omega, row.data(), block.cross_moment.data(), k);
      const double root = std::sqrt(inv_omega);
      buf.z.resize(k);
      for (std::size_t i = 0; i < k; ++i) buf.z[i] = row[i] * root;
      cholesky_rank1_update(block.precision_factor, buf.z.data());
    }
  }
  stats.shape += 0.5 * static_cast<double>(structure.locations);
  stats.scale += 0.5 * mahalanobis;
  ++stats.n_obs;
}

Predictive make_predictive(const SufficientStatistics& stats, const ResidualSummary& r, std::size_t dim) {
  Predictive p;
  p.mahalanobis = r.mahalanobis;
  p.log_det_scale = r.log_det;
  p.shape = stats.shape;
  p.scale = stats.scale;
  p.dim = dim;
  p.log_pdf = student_t_logpdf(stats.shape, stats.scale, r.mahalanobis, r.log_det, dim);
  if (std::isnan(p.log_pdf)) throw NumericalError("predictive log density is NaN");
  return p;
}

}  // namespace

void BvarPrior::validate(std::size_t locations) const {
  if (!(a > 0.0) || !std::isfinite(a)) throw ArgumentError("prior shape a must be positive");
  if (!(b > 0.0) || !std::isfinite(b)) throw ArgumentError("prior scale b must be positive");
  if (!(g > 0.0) || !std::isfinite(g)) throw ArgumentError("coefficient prior scale g must be positive");
  if (!omega.empty()) {
    if (omega.size() != locations) throw ArgumentError("omega must have one entry per location");
    for (double w : omega) {
      if (!(w > 0.0)) throw ArgumentError("omega entries must be positive");
    }
  }
}

BlockStructure BlockStructure::from_rows(const std::vector<std::vector<std::size_t>>& row_coefficients,
                                         std::size_t num_coefficients) {
  const std::size_t n = row_coefficients.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<long> owner(num_coefficients, -1);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t id : row_coefficients[s]) {
      if (id >= num_coefficients) throw ArgumentError("coefficient id out of range");
      if (owner[id] < 0) {
        owner[id] = static_cast<long>(s);
      } else {
        const std::size_t a = find(static_cast<std::size_t>(owner[id]));
        const std::size_t b = find(s);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  BlockStructure out;
  out.locations = n;
  out.coefficients = num_coefficients;
  out.location_block.assign(n, 0);
  out.row_local.resize(n);
  std::vector<long> block_of_root(n, -1);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t root = find(s);
    if (block_of_root[root] < 0) {
      block_of_root[root] = static_cast<long>(out.block_locations.size());
      out.block_locations.emplace_back();
      out.block_coefficients.emplace_back();
    }
    const auto b = static_cast<std::size_t>(block_of_root[root]);
    out.location_block[s] = b;
    out.block_locations[b].push_back(s);
  }
  std::vector<long> local_of(num_coefficients, -1);
  for (std::size_t s = 0; s < n; ++s) {
    auto& coefs = out.block_coefficients[out.location_block[s]];
    for (std::size_t id : row_coefficients[s]) {
      if (local_of[id] < 0) {
        local_of[id] = static_cast<long>(coefs.size());
        coefs.push_back(id);
      }
      out.row_local[s].push_back(static_cast<std::size_t>(local_of[id]));
    }
  }
  return out;
}

BlockStructure BlockStructure::single(std::size_t k, std::size_t locations) {
  std::vector<std::size_t> ids(k);
  std::iota(ids.begin(), ids.end(), 0);
  return from_rows(std::vector<std::vector<std::size_t>>(locations, ids), k);
}

BlockDesign BlockDesign::scatter(const BlockStructure& structure, const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return scatter(structure, flat);
}

BlockDesign BlockDesign::scatter(const BlockStructure& structure, std::span<const double> flat_rows) {
  BlockDesign design;
  design.offset.resize(structure.locations);
  std::size_t total = 0;
  for (std::size_t s = 0; s < structure.locations; ++s) {
    design.offset[s] = total;
    total += structure.block_dim(structure.location_block[s]);
  }
  design.values.assign(total, 0.0);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < structure.locations; ++s) {
    for (std::size_t local : structure.row_local[s]) {
      if (cursor >= flat_rows.size()) throw ArgumentError("design rows are shorter than the layout");
      design.values[design.offset[s] + local] += flat_rows[cursor++];
    }
  }
  if (cursor != flat_rows.size()) throw ArgumentError("design rows are longer than the layout");
  return design;
}

std::size_t SufficientStatistics::k() const {
  std::size_t total = 0;
  for (const auto& b : blocks) total += static_cast<std::size_t>(b.cross_moment.size());
  return total;
}

SufficientStatistics init_stats(const BvarPrior& prior, const BlockStructure& structure) {
  if (!(prior.g > 0.0)) throw ArgumentError("coefficient prior scale g must be positive");
  SufficientStatistics stats;
  stats.blocks.reserve(structure.num_blocks());
  const double root = 1.0 / std::sqrt(prior.g);
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    const auto k = static_cast<Eigen::Index>(structure.block_dim(b));
    StatsBlock block;
    block.precision_factor = Eigen::MatrixXd::Identity(k, k) * root;
    block.cross_moment = Eigen::VectorXd::Zero(k);
    stats.blocks.push_back(std::move(block));
  }
  stats.shape = prior.a;
  stats.scale = prior.b;
  stats.prior_shape = prior.a;
  stats.prior_scale = prior.b;
  return stats;
}

double student_t_logpdf(double shape, double scale, double mahalanobis, double log_det_scale,
                        std::size_t dim) {
  const double half_dim = 0.5 * static_cast<double>(dim);
  return std::lgamma(shape + half_dim) - std::lgamma(shape) -
         half_dim * std::log(2.0 * std::numbers::pi * scale) - 0.5 * log_det_scale -
         (shape + half_dim) * std::log1p(mahalanobis / (2.0 * scale));
}

Predictive predictive_logpdf(const SufficientStatistics& stats, const BlockStructure& structure,
                             const BvarPrior& prior, const BlockDesign& x, std::span<const double> y) {
  check_dims(stats, structure, x, y);
  return make_predictive(stats, residual_summary(stats, structure, prior, x, y), structure.locations);
}

void update_stats(SufficientStatistics& stats, const BlockStructure& structure, const BvarPrior& prior,
                  const BlockDesign& x, std::span<const double> y) {
  check_dims(stats, structure, x, y);
  const auto r = residual_summary(stats, structure, prior, x, y);
  absorb(stats, structure, prior, x, y, r.mahalanobis);
}

Predictive observe(SufficientStatistics& stats, const BlockStructure& structure, const BvarPrior& prior,
                   const BlockDesign& x, std::span<const double> y) {
  check_dims(stats, structure, x, y);
  const auto r = residual_summary(stats, structure, prior, x, y);
  Predictive p = make_predictive(stats, r, structure.locations);
  absorb(stats, structure, prior, x, y, r.mahalanobis);
  return p;
}

PredictiveMoments predictive_moments(const SufficientStatistics& stats, const BlockStructure& structure,
                                     const BvarPrior& prior, const BlockDesign& x) {
  const auto& kt = kernels::active();
  const auto S = static_cast<Eigen::Index>(structure.locations);
  PredictiveMoments out;
  out.mean = Eigen::VectorXd::Zero(S);
  out.covariance = Eigen::MatrixXd::Zero(S, S);
  Scratch& buf = scratch();
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    const StatsBlock& block = stats.blocks[b];
    const std::size_t k = structure.block_dim(b);
    const auto& locs = structure.block_locations[b];
    buf.coef.assign(block.cross_moment.data(), block.cross_moment.data() + k);
    forward_solve(block.precision_factor, buf.coef.data());
    backward_solve_transposed(block.precision_factor, buf.coef.data());
    buf.z.resize(locs.size() * k);
    for (std::size_t j = 0; j < locs.size(); ++j) {
      const auto row = x.row(structure, locs[j]);
      out.mean(static_cast<Eigen::Index>(locs[j])) = kt.dot(row.data(), buf.coef.data(), k);
      std::copy(row.begin(), row.end(), buf.z.begin() + static_cast<std::ptrdiff_t>(j * k));
      forward_solve(block.precision_factor, buf.z.data() + j * k);
    }
    for (std::size_t i = 0; i < locs.size(); ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double v = kt.dot(buf.z.data() + i * k, buf.z.data() + j * k, k);
        if (i == j) v += prior.omega_at(locs[i]);
        const auto si = static_cast<Eigen::Index>(locs[i]);
        const auto sj = static_cast<Eigen::Index>(locs[j]);
        out.covariance(si, sj) = v;
        out.covariance(sj, si) = v;
      }
    }
  }
  out.covariance *= stats.scale / stats.shape;
  if (stats.shape > 1.0) {
    out.covariance *= stats.shape / (stats.shape - 1.0);
  } else {
    out.covariance_finite = false;
  }
  return out;
}

Eigen::VectorXd map_coefficients(const SufficientStatistics& stats, const BlockStructure& structure) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(structure.coefficients));
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    const StatsBlock& block = stats.blocks[b];
    Eigen::VectorXd local = block.cross_moment;
    forward_solve(block.precision_factor, local.data());
    backward_solve_transposed(block.precision_factor, local.data());
    const auto& ids = structure.block_coefficients[b];
    for (std::size_t i = 0; i < ids.size(); ++i) c(static_cast<Eigen::Index>(ids[i])) = local(static_cast<Eigen::Index>(i));
  }
  return c;
}

Eigen::MatrixXd posterior_covariance_factor(const SufficientStatistics& stats, const BlockStructure& structure) {
  const auto K = static_cast<Eigen::Index>(structure.coefficients);
  Eigen::MatrixXd inverse = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t b = 0; b < structure.num_blocks(); ++b) {
    const auto& factor = stats.blocks[b].precision_factor;
    const auto k = factor.rows();
    Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(k, k);
    factor.triangularView<Eigen::Lower>().solveInPlace(linv);
    const Eigen::MatrixXd local = linv.transpose() * linv;
    const auto& ids = structure.block_coefficients[b];
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        inverse(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(i)]),
                static_cast<Eigen::Index>(ids[static_cast<std::size_t>(j)])) = local(i, j);
      }
    }
  }
  return inverse;
}

Eigen::MatrixXd global_design(const BlockStructure& structure, const BlockDesign& x) {
  const auto S = static_cast<Eigen::Index>(structure.locations);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(S, static_cast<Eigen::Index>(structure.coefficients));
  for (std::size_t s = 0; s < structure.locations; ++s) {
    const std::size_t b = structure.location_block[s];
    const auto row = x.row(structure, s);
    for (std::size_t i = 0; i < row.size(); ++i) {
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(structure.block_coefficients[b][i])) = row[i];
    }
  }
  return out;
}

BatchPosterior batch_posterior(const BvarPrior& prior, const BlockStructure& structure,
                               std::span<const BlockDesign> designs, std::span<const std::vector<double>> ys) {
  if (designs.size() != ys.size()) throw ArgumentError("designs and observations differ in length");
  const auto K = static_cast<Eigen::Index>(structure.coefficients);
  const auto S = static_cast<Eigen::Index>(structure.locations);
  Eigen::VectorXd inv_omega(S);
  for (Eigen::Index s = 0; s < S; ++s) inv_omega(s) = 1.0 / prior.omega_at(static_cast<std::size_t>(s));
  BatchPosterior out;
  out.precision = Eigen::MatrixXd::Identity(K, K) / prior.g;
  out.cross_moment = Eigen::VectorXd::Zero(K);
  double yy = 0.0;
  for (std::size_t t = 0; t < designs.size(); ++t) {
    const Eigen::MatrixXd X = global_design(structure, designs[t]);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys[t].data(), S);
    out.precision += X.transpose() * inv_omega.asDiagonal() * X;
    out.cross_moment += X.transpose() * inv_omega.asDiagonal() * y;
    yy += y.dot(inv_omega.asDiagonal() * y);
  }
  out.n_obs = designs.size();
  out.shape = prior.a + 0.5 * static_cast<double>(S) * static_cast<double>(designs.size());
  const Eigen::VectorXd c = out.precision.ldlt().solve(out.cross_moment);
  out.scale = prior.b + 0.5 * (yy - out.cross_moment.dot(c));
  return out;
}

double batch_log_marginal(const BvarPrior& prior, const BlockStructure& structure,
                          std::span<const BlockDesign> designs, std::span<const std::vector<double>> ys) {
  const BatchPosterior post = batch_posterior(prior, structure, designs, ys);
  const double n = static_cast<double>(designs.size());
  const double S = static_cast<double>(structure.locations);
  const double K = static_cast<double>(structure.coefficients);
  double log_omega = 0.0;
  for (std::size_t s = 0; s < structure.locations; ++s) log_omega += std::log(prior.omega_at(s));
  Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("batch precision matrix is not positive definite");
  const Eigen::MatrixXd lower = llt.matrixL();
  const double log_det_precision = 2.0 * lower.diagonal().array().log().sum();
  return -0.5 * n * S * std::log(2.0 * std::numbers::pi) - 0.5 * n * log_omega - 0.5 * K * std::log(prior.g) -
         0.5 * log_det_precision + prior.a * std::log(prior.b) - post.shape * std::log(post.scale) +
         std::lgamma(post.shape) - std::lgamma(prior.a);
}

}  // namespace bocpdms
