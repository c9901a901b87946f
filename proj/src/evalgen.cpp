#include "bocpdms/evalgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "bocpdms/errors.hpp"
#include "bocpdms/logmath.hpp"
#include "bocpdms/model.hpp"
#include "bocpdms/spatial.hpp"

namespace bocpdms {

using nlohmann::json;

void ScenarioSpec::validate() const {
  if (locations == 0) throw ArgumentError("scenario needs at least one location");
  if (length == 0) throw ArgumentError("scenario length must be positive");
  if (segments.empty()) throw ArgumentError("scenario needs at least one segment");
  if (segments.front().start != 1) throw ArgumentError("the first segment must start at t = 1");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (i > 0 && seg.start <= segments[i - 1].start) throw ArgumentError("segment starts must increase");
    if (!(seg.noise_sd > 0.0)) throw ArgumentError("segment noise_sd must be positive");
    if (seg.intercept.size() != 0 && static_cast<std::size_t>(seg.intercept.size()) != locations) {
      throw ArgumentError("segment intercept has the wrong length");
    }
    for (const auto& a : seg.coefficients) {
      if (static_cast<std::size_t>(a.rows()) != locations || a.rows() != a.cols()) {
        throw ArgumentError("segment coefficient matrices must be S x S");
      }
    }
    const double rho = spectral_radius(seg.coefficients);
    if (!(rho < 1.0)) {
      throw ArgumentError("segment " + std::to_string(i + 1) + " is not stable: companion spectral radius " +
                          std::to_string(rho));
    }
  }
}

double spectral_radius(const std::vector<Eigen::MatrixXd>& coefficients) {
  if (coefficients.empty()) return 0.0;
  const auto S = coefficients.front().rows();
  const auto L = static_cast<Eigen::Index>(coefficients.size());
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(S * L, S * L);
  for (Eigen::Index l = 0; l < L; ++l) companion.block(0, l * S, S, S) = coefficients[static_cast<std::size_t>(l)];
  if (L > 1) companion.block(S, 0, S * (L - 1), S * (L - 1)).setIdentity();
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

Eigen::MatrixXd json_matrix(const json& j, std::size_t n) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (!j.is_array() || j.size() != n) throw ArgumentError("coefficient matrix must have S rows");
  for (std::size_t r = 0; r < n; ++r) {
    if (!j[r].is_array() || j[r].size() != n) throw ArgumentError("coefficient matrix must have S columns");
    for (std::size_t c = 0; c < n; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("scenario is not valid JSON: ") + e.what());
  }
  ScenarioSpec spec;
  try {
    if (j.contains("grid")) {
      spec.grid_rows = j.at("grid").at(0).get<std::size_t>();
      spec.grid_cols = j.at("grid").at(1).get<std::size_t>();
      spec.locations = spec.grid_rows * spec.grid_cols;
    } else {
      spec.locations = j.at("locations").get<std::size_t>();
    }
    if (j.contains("radii")) spec.radii = j.at("radii").get<std::vector<double>>();
    spec.length = j.at("T").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.burn_in = j.value("burn_in", std::size_t{100});
    NeighbourhoodSystem nbh;
    if (spec.grid_rows > 0 && !spec.radii.empty()) nbh = grid_neighbourhoods(spec.grid_rows, spec.grid_cols, spec.radii);
    for (const auto& js : j.at("segments")) {
      SegmentSpec seg;
      seg.start = js.at("start").get<std::size_t>();
      seg.label = js.value("label", std::string{});
      seg.noise_sd = js.value("noise_sd", 1.0);
      if (js.contains("intercept")) {
        const auto& ji = js.at("intercept");
        seg.intercept = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(spec.locations), 0.0);
        if (ji.is_number()) {
          seg.intercept.setConstant(ji.get<double>());
        } else {
          const auto v = ji.get<std::vector<double>>();
          if (v.size() != spec.locations) throw ArgumentError("intercept must have S entries");
          for (std::size_t s = 0; s < v.size(); ++s) seg.intercept(static_cast<Eigen::Index>(s)) = v[s];
        }
      }
      if (js.contains("matrices")) {
        for (const auto& jm : js.at("matrices")) seg.coefficients.push_back(json_matrix(jm, spec.locations));
      } else if (js.contains("ring_weights")) {
        if (nbh.num_locations() != spec.locations) throw ArgumentError("ring_weights need \"grid\" and \"radii\"");
        for (const auto& jw : js.at("ring_weights")) {
          const auto w = jw.get<std::vector<double>>();
          if (w.size() > nbh.num_rings() + 1) throw ArgumentError("more ring weights than rings");
          Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.locations),
                                                    static_cast<Eigen::Index>(spec.locations));
          for (std::size_t s = 0; s < spec.locations; ++s) {
            for (std::size_t i = 0; i < w.size(); ++i) {
              for (std::size_t other : nbh.ring(s, i)) a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(other)) = w[i];
            }
          }
          seg.coefficients.push_back(std::move(a));
        }
      }
      spec.segments.push_back(std::move(seg));
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("malformed scenario: ") + e.what());
  }
  spec.validate();
  return spec;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

Simulation simulate(const ScenarioSpec& spec) {
  spec.validate();
  const auto S = static_cast<Eigen::Index>(spec.locations);
  std::size_t max_lag = 0;
  for (const auto& seg : spec.segments) max_lag = std::max(max_lag, seg.coefficients.size());
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Eigen::VectorXd> lags(max_lag, Eigen::VectorXd::Zero(S));  // lags[0] = y_{t-1}
  auto draw = [&](const SegmentSpec& seg) {
    Eigen::VectorXd y = seg.intercept.size() ? seg.intercept : Eigen::VectorXd::Zero(S);
    for (std::size_t l = 0; l < seg.coefficients.size(); ++l) y += seg.coefficients[l] * lags[l];
    for (Eigen::Index s = 0; s < S; ++s) y(s) += seg.noise_sd * normal(rng);
    if (max_lag > 0) {
      std::rotate(lags.rbegin(), lags.rbegin() + 1, lags.rend());
      lags[0] = y;
    }
    return y;
  };
  for (std::size_t i = 0; i < spec.burn_in; ++i) draw(spec.segments.front());

  Simulation sim;
  sim.series.resize(static_cast<Eigen::Index>(spec.length), S);
  std::size_t current = 0;
  for (std::size_t t = 1; t <= spec.length; ++t) {
    while (current + 1 < spec.segments.size() && spec.segments[current + 1].start <= t) ++current;
    sim.series.row(static_cast<Eigen::Index>(t - 1)) = draw(spec.segments[current]).transpose();
  }
  for (std::size_t i = 0; i < spec.segments.size(); ++i) {
    if (spec.segments[i].start <= spec.length) sim.truth.entries.push_back({spec.segments[i].start, i});
  }
  return sim;
}

namespace {

// seg[m][a][b]: log marginal of y_{t0+a .. t0+b} under model m, designs from the full series.
struct SegmentTable {
  std::size_t first = 0;  // t0
  std::size_t n = 0;      // number of time points t0..T
  std::vector<std::vector<std::vector<double>>> marginal;
};

SegmentTable segment_table(const Eigen::MatrixXd& series, const ModelUniverse& universe) {
  universe.validate();
  const auto T = static_cast<std::size_t>(series.rows());
  const auto S = static_cast<std::size_t>(series.cols());
  if (T > 12) throw ArgumentError("brute-force enumeration refuses T > 12");
  const std::size_t lag = universe.members.front().lag;
  for (const auto& m : universe.members) {
    if (m.lag != lag) throw ArgumentError("brute-force enumeration needs a common lag length");
    if (m.exogenous != 0) throw ArgumentError("brute-force enumeration does not take exogenous inputs");
  }
  if (T <= lag) throw ArgumentError("series is too short for the lag length");
  SegmentTable table;
  table.first = lag + 1;
  table.n = T - lag;
  std::vector<std::vector<double>> all_rows;
  for (std::size_t t = 1; t <= T; ++t) {
    std::vector<double> r(S);
    for (std::size_t s = 0; s < S; ++s) r[s] = series(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(s));
    all_rows.push_back(std::move(r));
  }
  const std::vector<std::vector<double>> ys(all_rows.begin() + static_cast<std::ptrdiff_t>(lag), all_rows.end());
  for (const auto& spec : universe.members) {
    const Model model(spec, S);
    History history(lag);
    std::vector<BlockDesign> designs;
    for (std::size_t t = 1; t <= T; ++t) {
      if (t >= table.first) designs.push_back(model.design(history, {}));
      history.push(all_rows[t - 1]);
    }
    std::vector<std::vector<double>> marg(table.n, std::vector<double>(table.n, kNegInf));
    for (std::size_t a = 0; a < table.n; ++a) {
      for (std::size_t b = a; b < table.n; ++b) {
        marg[a][b] = batch_log_marginal(spec.prior, model.structure(),
                                        std::span<const BlockDesign>(designs).subspan(a, b - a + 1),
                                        std::span<const std::vector<double>>(ys).subspan(a, b - a + 1));
      }
    }
    table.marginal.push_back(std::move(marg));
  }
  return table;
}

// Calls visit(log density, segments) for every segmentation and model assignment.
void enumerate(const SegmentTable& table, const ModelUniverse& universe, const HazardSpec& hazard,
               const std::function<void(double, const std::vector<Segment>&)>& visit) {
  hazard.validate();
  const double log_h = hazard.log_h();
  const double log_1mh = hazard.log_1mh();
  std::vector<Segment> segments;
  std::function<void(std::size_t, double)> rec = [&](std::size_t a, double acc) {
    for (std::size_t b = a; b < table.n; ++b) {
      for (std::size_t m = 0; m < universe.members.size(); ++m) {
        double d = acc + std::log(universe.q(m)) + table.marginal[m][a][b];
        if (b > a) d += static_cast<double>(b - a) * log_1mh;
        if (a > 0) d += log_h;
        segments.push_back({table.first + a, m});
        if (b + 1 == table.n) {
          visit(d, segments);
        } else {
          rec(b + 1, d);
        }
        segments.pop_back();
      }
    }
  };
  rec(0, 0.0);
}

}  // namespace

double brute_force_evidence(const Eigen::MatrixXd& series, const ModelUniverse& universe, const HazardSpec& hazard) {
  const SegmentTable table = segment_table(series, universe);
  LogSumAccumulator acc;
  enumerate(table, universe, hazard, [&](double d, const std::vector<Segment>&) { acc.add(d); });
  return acc.value();
}

BruteForceMap brute_force_map(const Eigen::MatrixXd& series, const ModelUniverse& universe, const HazardSpec& hazard) {
  const SegmentTable table = segment_table(series, universe);
  BruteForceMap best{kNegInf, {}};
  enumerate(table, universe, hazard, [&](double d, const std::vector<Segment>& segs) {
    if (d > best.log_density) {
      best.log_density = d;
      best.segmentation.entries = segs;
      best.segmentation.log_map_density = d;
    }
  });
  return best;
}

MetricSummary metrics(std::span<const Eigen::VectorXd> predictions, std::span<const Eigen::VectorXd> actuals,
                      std::span<const double> log_densities) {
  if (predictions.empty()) throw ArgumentError("metrics need at least one prediction");
  if (predictions.size() != actuals.size() || log_densities.size() != predictions.size()) {
    throw ArgumentError("predictions, actuals and densities must align");
  }
  MetricAccumulator acc;
  for (std::size_t i = 0; i < predictions.size(); ++i) acc.add(predictions[i], actuals[i], log_densities[i]);
  return acc.summary();
}

void MetricAccumulator::add(const Eigen::VectorXd& prediction, const Eigen::VectorXd& actual, double log_density) {
  if (prediction.size() != actual.size()) throw ArgumentError("prediction and actual differ in dimension");
  const double se = (prediction - actual).squaredNorm() / static_cast<double>(actual.size());
  const double nll = -log_density;
  ++n_;
  const double n = static_cast<double>(n_);
  const double d_se = se - se_mean_;
  se_mean_ += d_se / n;
  se_m2_ += d_se * (se - se_mean_);
  const double d_nll = nll - nll_mean_;
  nll_mean_ += d_nll / n;
  nll_m2_ += d_nll * (nll - nll_mean_);
}

MetricSummary MetricAccumulator::summary() const {
  if (n_ == 0) throw ArgumentError("metrics need at least one prediction");
  MetricSummary out;
  out.count = n_;
  out.mse = se_mean_;
  out.nll = nll_mean_;
  if (n_ >= 2) {
    const double n = static_cast<double>(n_);
    out.mse_half_width = 1.96 * std::sqrt(se_m2_ / (n - 1.0) / n);
    out.nll_half_width = 1.96 * std::sqrt(nll_m2_ / (n - 1.0) / n);
  }
  return out;
}

double gaussian_logpdf(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

std::vector<SgvPoint> sgv_trace(const std::vector<std::vector<double>>& model_posteriors, std::size_t window) {
  SgvWindow tracker(window);
  std::vector<SgvPoint> out;
  out.reserve(model_posteriors.size());
  for (const auto& post : model_posteriors) out.push_back(tracker.push(post));
  return out;
}

SgvWindow::SgvWindow(std::size_t window) : window_(window) {
  if (window < 2) throw ArgumentError("SGV window must be at least 2");
}

SgvPoint SgvWindow::push(std::span<const double> model_posterior) {
  if (model_posterior.empty()) throw ArgumentError("model posterior rows must be non-empty");
  if (models_ == 0) models_ = model_posterior.size();
  if (model_posterior.size() != models_) throw ArgumentError("model posterior rows differ in length");
  argmax_.push_back(static_cast<std::size_t>(std::max_element(model_posterior.begin(), model_posterior.end()) -
                                             model_posterior.begin()));
  if (argmax_.size() > window_) argmax_.pop_front();

  SgvPoint p;
  const std::size_t n = argmax_.size();
  const std::size_t M = models_;
  p.shortened = n < window_;
  if (n >= 2) {
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M));
    for (std::size_t i = 0; i < n; ++i) onehot(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(argmax_[i])) = 1.0;
    const Eigen::RowVectorXd mean = onehot.colwise().mean();
    const Eigen::MatrixXd centred = onehot.rowwise() - mean;
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(n - 1);
    // Determinants below rounding level of the entries are exact zeros.
    auto clean_det = [](const Eigen::MatrixXd& c) {
      const double d = c.determinant();
      const double scale = std::pow(std::max(1.0, c.cwiseAbs().maxCoeff()), static_cast<double>(c.rows()));
      return d <= 1e-12 * scale ? 0.0 : d;
    };
    p.sgv = std::pow(clean_det(cov), 1.0 / static_cast<double>(M));
    if (M >= 2) {
      const auto k = static_cast<Eigen::Index>(M - 1);
      p.reduced_sgv = std::pow(clean_det(cov.topLeftCorner(k, k)), 1.0 / static_cast<double>(M - 1));
    }
  }
  p.log_sgv = p.sgv > 0.0 ? std::log(p.sgv) : kNegInf;
  return p;
}

}  // namespace bocpdms
