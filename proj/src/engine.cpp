#include "bocpdms/engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

#include "bocpdms/errors.hpp"
#include "bocpdms/logmath.hpp"

namespace bocpdms {

void HazardSpec::validate() const {
  if (!(lambda >= 1.0) || !std::isfinite(lambda)) throw ArgumentError("hazard lambda must be finite and >= 1");
}

double HazardSpec::log_h() const { return -std::log(lambda); }

double HazardSpec::log_1mh() const { return lambda == 1.0 ? kNegInf : std::log1p(-1.0 / lambda); }

RecursionMode parse_mode(const std::string& name) {
  if (name == "paper" || name == "paper-faithful") return RecursionMode::paper;
  if (name == "strict" || name == "strict-ppm") return RecursionMode::strict;
  throw ArgumentError("unknown recursion mode: " + name);
}

std::string to_string(RecursionMode mode) { return mode == RecursionMode::paper ? "paper" : "strict"; }

void ModelUniverse::validate() const {
  if (members.empty()) throw ArgumentError("the model universe is empty");
  std::set<std::string> names;
  for (const auto& m : members) {
    if (!m.name.empty() && !names.insert(m.name).second) throw ArgumentError("duplicate model name: " + m.name);
  }
  if (prior_q.empty()) return;
  if (prior_q.size() != members.size()) throw ArgumentError("prior_q must have one entry per model");
  double sum = 0.0;
  for (double q : prior_q) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw ArgumentError("prior_q entries must be non-negative");
    sum += q;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("prior_q must sum to 1");
}

double ModelUniverse::q(std::size_t m) const {
  return prior_q.empty() ? 1.0 / static_cast<double>(members.size()) : prior_q.at(m);
}

double growth_log_joint(double log_pred, double log_joint, const HazardSpec& hazard, double log_cond,
                        RecursionMode mode) {
  double v = log_pred + log_joint + hazard.log_1mh();
  if (mode == RecursionMode::paper) v += log_cond;
  return v;
}

double cp_log_joint(double log_pred0, double log_q, const HazardSpec& hazard, std::span<const double> parents) {
  if (parents.empty()) throw StateError("changepoint update needs at least one parent hypothesis");
  return log_pred0 + log_q + hazard.log_h() + log_sum_exp(parents);
}

BayesFactor bayes_factor(std::span<const double> model_posterior, std::span<const double> prior_q,
                         std::size_t m1, std::size_t m2) {
  if (model_posterior.size() != prior_q.size()) throw ArgumentError("posterior and prior sizes differ");
  if (m1 >= model_posterior.size() || m2 >= model_posterior.size()) throw ArgumentError("model id out of range");
  if (m1 == m2) return {1.0, false};
  if (model_posterior[m2] == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {model_posterior[m1] * prior_q[m2] / (model_posterior[m2] * prior_q[m1]), false};
}

void prune(RunLengthGrid& grid, std::size_t r_max) {
  if (r_max < 1) throw ArgumentError("R_max must be at least 1");
  auto& entries = grid.entries;
  if (entries.size() <= r_max) return;
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t i, std::size_t j) {
    if (entries[i].log_joint != entries[j].log_joint) return entries[i].log_joint > entries[j].log_joint;
    return entries[i].run_length < entries[j].run_length;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(r_max), order.end(), better);
  std::vector<bool> keep(entries.size(), false);
  for (std::size_t i = 0; i < r_max; ++i) keep[order[i]] = true;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].run_length == 0) keep[i] = true;
  }
  std::vector<RunLengthEntry> kept;
  kept.reserve(r_max + 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (keep[i]) kept.push_back(std::move(entries[i]));
  }
  entries = std::move(kept);
}

// --- MAP segmentation -------------------------------------------------------

const MapTracker::Record* MapTracker::find(std::size_t time) const {
  auto it = std::lower_bound(history_.begin(), history_.end(), time,
                             [](const auto& rec, std::size_t v) { return rec.first < v; });
  if (it == history_.end() || it->first != time) return nullptr;
  return &it->second;
}

void MapTracker::update(std::size_t t, std::size_t first_active, const std::vector<RunLengthGrid>& grids,
                        const HazardSpec& hazard, const ModelUniverse& universe) {
  const double log_h = hazard.log_h();
  const double log_1mh = hazard.log_1mh();
  double best = kNegInf;
  std::size_t best_r = std::numeric_limits<std::size_t>::max();
  std::size_t best_m = std::numeric_limits<std::size_t>::max();
  const Record* best_parent = nullptr;
  std::vector<std::size_t> needed{t};
  for (const auto& grid : grids) {
    if (!grid.active) continue;
    const double log_q = std::log(universe.q(grid.model_id));
    for (const auto& e : grid.entries) {
      const std::size_t start = t - e.run_length;
      const Record* parent = nullptr;
      double candidate = log_q + e.segment_loglik;
      if (e.run_length > 0) candidate += static_cast<double>(e.run_length) * log_1mh;
      if (start > first_active) {
        parent = find(start - 1);
        if (parent == nullptr) throw StateError("MAP history is missing time " + std::to_string(start - 1));
        candidate += parent->log_density + log_h;
        needed.push_back(start - 1);
      }
      if (std::isnan(candidate)) candidate = kNegInf;
      const bool wins = candidate > best ||
                        (candidate == best && (e.run_length < best_r ||
                                               (e.run_length == best_r && grid.model_id < best_m)));
      if (wins) {
        best = candidate;
        best_r = e.run_length;
        best_m = grid.model_id;
        best_parent = parent;
      }
    }
  }
  if (best_m == std::numeric_limits<std::size_t>::max()) throw StateError("MAP update without active hypotheses");
  Record rec;
  rec.log_density = best;
  rec.node = std::make_shared<const Node>(
      Node{Segment{t - best_r, best_m}, best_parent != nullptr ? best_parent->node : nullptr});
  // Future steps only ever look up t - r - 1 for run lengths alive now.
  std::sort(needed.begin(), needed.end());
  std::vector<std::pair<std::size_t, Record>> kept;
  kept.reserve(needed.size());
  for (auto& item : history_) {
    if (std::binary_search(needed.begin(), needed.end(), item.first)) kept.push_back(std::move(item));
  }
  kept.emplace_back(t, rec);
  history_ = std::move(kept);
  current_ = std::move(rec);
}

Segmentation MapTracker::segmentation() const {
  Segmentation out;
  out.log_map_density = current_.log_density;
  for (const Node* n = current_.node.get(); n != nullptr; n = n->parent.get()) out.entries.push_back(n->segment);
  std::reverse(out.entries.begin(), out.entries.end());
  return out;
}

// --- Engine -----------------------------------------------------------------

struct Engine::StepContext {
  std::size_t t = 0;
  std::span<const double> y;
  std::span<const double> z;
  double prev_log_evidence = 0.0;
  bool prev_any = false;
  std::vector<double> cp_gradient;
  // Paper mode: sum_m q(m | r) G(m, r) for every run length alive at t - 1.
  std::vector<std::pair<std::size_t, std::vector<double>>> cond_gradient;
};

struct Engine::ModelStep {
  RunLengthGrid grid;
  bool has_objective = false;
  Objective objective{0.0, {}};
  std::vector<double> mixture_terms;  // log p(r, m | y_{1:t-1}) + log f_m(y_t | r)
  std::exception_ptr error;
};

Engine::Engine(ModelUniverse universe, EngineConfig config, std::size_t locations, std::size_t exogenous)
    : universe_(std::move(universe)), config_(config), locations_(locations), exogenous_(exogenous) {
  universe_.validate();
  config_.hazard.validate();
  if (locations_ == 0) throw ArgumentError("the data must have at least one location");
  if (config_.horizon < 1) throw ArgumentError("forecast horizon must be at least 1");
  if (config_.threads < 1) throw ArgumentError("thread count must be at least 1");
  std::size_t max_lag = 0;
  for (std::size_t m = 0; m < universe_.members.size(); ++m) {
    ModelSpec spec = universe_.members[m];
    if (spec.exogenous != exogenous_) throw ArgumentError("model '" + spec.name + "' expects a different number of exogenous inputs");
    models_.emplace_back(std::move(spec), locations_);
    hyper_.push_back(HyperState::start(models_.back().spec().prior.a, models_.back().spec().prior.b,
                                       config_.hyperopt.alpha0));
    RunLengthGrid grid;
    grid.model_id = m;
    grids_.push_back(std::move(grid));
    max_lag = std::max(max_lag, models_.back().lag());
  }
  history_ = History(max_lag);
  last_z_.assign(exogenous_, 0.0);
}

const StepOutput& Engine::last() const {
  if (!last_) throw StateError("no observation has been processed yet");
  return *last_;
}

std::size_t Engine::retained() const {
  std::size_t n = 0;
  for (const auto& g : grids_) n += g.entries.size();
  return n;
}

void Engine::run_model(std::size_t m, const StepContext& ctx, ModelStep& out) {
  const Model& model = models_[m];
  out.grid = std::move(grids_[m]);
  if (ctx.t - 1 < model.lag()) return;

  const std::size_t dims = 2 * models_.size();
  const bool track = gradients();
  const HazardSpec& hazard = config_.hazard;
  const double log_q = std::log(universe_.q(m));

  BvarPrior prior = model.spec().prior;
  prior.a = hyper_[m].a;
  prior.b = hyper_[m].b;
  const BlockDesign x = model.design(history_, ctx.z);

  RunLengthEntry fresh;
  fresh.stats = init_stats(prior, model.structure());
  const Predictive p0 = observe(fresh.stats, model.structure(), prior, x, ctx.y);
  fresh.segment_loglik = p0.log_pdf;
  const HyperGradient g0 = track ? predictive_gradient(p0, prior.a, prior.b) : HyperGradient{};
  if (track) {
    fresh.gradient.assign(dims, 0.0);
    fresh.gradient[2 * m] = g0.d_log_a;
    fresh.gradient[2 * m + 1] = g0.d_log_b;
  }

  auto& entries = out.grid.entries;
  if (!out.grid.active) {
    // Activation: no parent hypotheses exist, so no hazard factor.
    fresh.log_joint = p0.log_pdf + log_q;
    out.grid.active = true;
    entries.clear();
    entries.push_back(std::move(fresh));
    return;
  }

  fresh.log_joint = p0.log_pdf + log_q + hazard.log_h() + ctx.prev_log_evidence;
  if (track) {
    for (std::size_t i = 0; i < dims; ++i) fresh.gradient[i] += ctx.cp_gradient[i];
  }

  // Model-conditional run-length weights at t - 1 for the hyperparameter objective.
  std::vector<double> prev_joints;
  prev_joints.reserve(entries.size());
  for (const auto& e : entries) prev_joints.push_back(e.log_joint);
  const double prev_model_mass = log_sum_exp(prev_joints);
  HyperGradient mean_own{};
  if (track && std::isfinite(prev_model_mass)) {
    for (const auto& e : entries) {
      const double w = std::exp(e.log_joint - prev_model_mass);
      mean_own.d_log_a += w * e.gradient[2 * m];
      mean_own.d_log_b += w * e.gradient[2 * m + 1];
    }
  }
  std::vector<MixtureTerm> objective_terms;
  if (track) objective_terms.reserve(entries.size() + 1);

  out.mixture_terms.reserve(entries.size());
  for (auto& e : entries) {
    const double parent_joint = e.log_joint;
    const Predictive p = observe(e.stats, model.structure(), prior, x, ctx.y);
    out.mixture_terms.push_back(parent_joint - ctx.prev_log_evidence + p.log_pdf);
    e.log_joint = growth_log_joint(p.log_pdf, parent_joint, hazard, e.log_cond, config_.mode);
    e.segment_loglik += p.log_pdf;
    if (track) {
      const HyperGradient g = predictive_gradient(p, e.stats.prior_shape, e.stats.prior_scale);
      objective_terms.push_back({hazard.log_1mh() + parent_joint - prev_model_mass + p.log_pdf,
                                 {e.gradient[2 * m] - mean_own.d_log_a + g.d_log_a,
                                  e.gradient[2 * m + 1] - mean_own.d_log_b + g.d_log_b}});
      if (config_.mode == RecursionMode::paper) {
        auto it = std::lower_bound(ctx.cond_gradient.begin(), ctx.cond_gradient.end(), e.run_length,
                                   [](const auto& item, std::size_t r) { return item.first < r; });
        if (it == ctx.cond_gradient.end() || it->first != e.run_length) {
          throw StateError("conditional model posterior gradient missing for a run length");
        }
        for (std::size_t i = 0; i < dims; ++i) e.gradient[i] += e.gradient[i] - it->second[i];
      }
      e.gradient[2 * m] += g.d_log_a;
      e.gradient[2 * m + 1] += g.d_log_b;
    }
    ++e.run_length;
  }
  if (track) {
    objective_terms.push_back({hazard.log_h() + p0.log_pdf, g0});
    out.objective = mixture_objective(objective_terms);
    out.has_objective = true;
  }
  entries.insert(entries.begin(), std::move(fresh));
  if (config_.r_max > 0) prune(out.grid, config_.r_max);
}

void Engine::aggregate(StepOutput& out) {
  const std::size_t M = models_.size();
  std::vector<double> all;
  std::vector<std::pair<std::size_t, double>> by_run;
  for (const auto& g : grids_) {
    for (const auto& e : g.entries) {
      if (std::isnan(e.log_joint)) throw NumericalError("NaN log joint probability");
      all.push_back(e.log_joint);
      by_run.emplace_back(e.run_length, e.log_joint);
    }
  }
  const double ev = log_sum_exp(all);
  if (!std::isfinite(ev)) throw NumericalError("every run-length hypothesis has zero probability");
  out.log_evidence = ev;

  std::sort(by_run.begin(), by_run.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<std::size_t, double>> run_mass;  // (r, log sum over models)
  for (std::size_t i = 0; i < by_run.size();) {
    std::size_t j = i;
    LogSumAccumulator acc;
    while (j < by_run.size() && by_run[j].first == by_run[i].first) acc.add(by_run[j++].second);
    run_mass.emplace_back(by_run[i].first, acc.value());
    i = j;
  }
  out.global_rld.reserve(run_mass.size());
  for (const auto& [r, mass] : run_mass) out.global_rld.push_back({r, std::exp(mass - ev)});

  out.model_posterior.assign(M, 0.0);
  out.model_rld.assign(M, {});
  out.active.assign(M, false);
  for (auto& g : grids_) {
    out.active[g.model_id] = g.active;
    if (!g.active) continue;
    std::vector<double> lj;
    lj.reserve(g.entries.size());
    for (const auto& e : g.entries) lj.push_back(e.log_joint);
    const double model_mass = log_sum_exp(lj);
    out.model_posterior[g.model_id] = std::exp(model_mass - ev);
    auto& rld = out.model_rld[g.model_id];
    rld.reserve(g.entries.size());
    for (auto& e : g.entries) {
      out.joint_posterior.push_back({g.model_id, e.run_length, std::exp(e.log_joint - ev)});
      rld.push_back({e.run_length, model_mass == kNegInf ? 0.0 : std::exp(e.log_joint - model_mass)});
      auto it = std::lower_bound(run_mass.begin(), run_mass.end(), e.run_length,
                                 [](const auto& item, std::size_t r) { return item.first < r; });
      e.log_cond = it->second == kNegInf ? kNegInf : e.log_joint - it->second;
    }
  }
}

const StepOutput& Engine::step(std::span<const double> y, std::span<const double> z) {
  if (failed_) throw StateError("the engine stopped after a numerical collapse");
  if (y.size() != locations_) throw ArgumentError("observation has the wrong dimension");
  if (z.size() != exogenous_) throw ArgumentError("exogenous vector has the wrong length");
  for (double v : y) {
    if (!std::isfinite(v)) throw ArgumentError("observations must be finite");
  }
  const std::size_t M = models_.size();
  const std::size_t dims = 2 * M;
  const bool track = gradients();

  StepContext ctx;
  ctx.t = t_ + 1;
  ctx.y = y;
  ctx.z = z;
  ctx.prev_log_evidence = log_evidence_;
  ctx.prev_any = any_active_;
  if (track && any_active_) {
    ctx.cp_gradient.assign(dims, 0.0);
    std::vector<std::pair<std::size_t, std::vector<double>>> weighted;
    for (const auto& g : grids_) {
      for (const auto& e : g.entries) {
        const double w = std::exp(e.log_joint - log_evidence_);
        for (std::size_t i = 0; i < dims; ++i) ctx.cp_gradient[i] += w * e.gradient[i];
        if (config_.mode == RecursionMode::paper) {
          const double c = std::exp(e.log_cond);
          std::vector<double> v(dims);
          for (std::size_t i = 0; i < dims; ++i) v[i] = c * e.gradient[i];
          weighted.emplace_back(e.run_length, std::move(v));
        }
      }
    }
    std::stable_sort(weighted.begin(), weighted.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& item : weighted) {
      if (!ctx.cond_gradient.empty() && ctx.cond_gradient.back().first == item.first) {
        for (std::size_t i = 0; i < dims; ++i) ctx.cond_gradient.back().second[i] += item.second[i];
      } else {
        ctx.cond_gradient.push_back(std::move(item));
      }
    }
  }

  std::vector<ModelStep> steps(M);
  auto work = [&](std::size_t m) {
    try {
      run_model(m, ctx, steps[m]);
    } catch (...) {
      steps[m].error = std::current_exception();
    }
  };
  const std::size_t workers = std::min(config_.threads, M);
  if (workers <= 1) {
    for (std::size_t m = 0; m < M; ++m) work(m);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t m = w; m < M; m += workers) work(m);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t m = 0; m < M; ++m) grids_[m] = std::move(steps[m].grid);
  for (auto& s : steps) {
    if (s.error) {
      failed_ = true;
      std::rethrow_exception(s.error);
    }
  }

  auto out = std::make_shared<StepOutput>();
  out->t = ctx.t;
  out->hyper_objective.assign(M, 0.0);
  out->hyper_gradient.assign(M, {});
  bool now_active = false;
  for (const auto& g : grids_) now_active = now_active || g.active;

  if (now_active) {
    if (!any_active_) first_active_ = ctx.t;
    try {
      aggregate(*out);
    } catch (const NumericalError& e) {
      failed_ = true;
      throw NumericalCollapse(e.what(), ctx.t, last_);
    }
    map_.update(ctx.t, first_active_, grids_, config_.hazard, universe_);
    out->map = map_.segmentation();
    if (last_ && out->map.changepoints() > 0) {
      const auto& prev = last_->map;
      out->new_changepoint =
          prev.changepoints() == 0 || prev.entries.back().cp_time != out->map.entries.back().cp_time;
    }
    std::vector<double> terms;
    for (const auto& s : steps) terms.insert(terms.end(), s.mixture_terms.begin(), s.mixture_terms.end());
    if (!terms.empty() && last_ && !last_->forecasts.empty()) {
      out->has_one_step = true;
      out->one_step_log_density = log_sum_exp(terms);
      out->one_step_error = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())) -
                            last_->forecasts.front().mean;
    }
    if (track) {
      out->log_evidence_gradient.assign(dims, 0.0);
      for (const auto& g : grids_) {
        for (const auto& e : g.entries) {
          const double w = std::exp(e.log_joint - out->log_evidence);
          for (std::size_t i = 0; i < dims; ++i) out->log_evidence_gradient[i] += w * e.gradient[i];
        }
      }
    }
    for (std::size_t m = 0; m < M; ++m) {
      if (!steps[m].has_objective) continue;
      out->hyper_objective[m] = steps[m].objective.value;
      out->hyper_gradient[m] = steps[m].objective.gradient;
      if (config_.hyperopt.enabled) sgd_step(hyper_[m], steps[m].objective.gradient);
    }
    log_evidence_ = out->log_evidence;
    any_active_ = true;
  } else {
    out->active.assign(M, false);
    out->model_posterior.assign(M, 0.0);
    out->model_rld.assign(M, {});
  }
  out->hyper = hyper_;

  history_.push(y);
  last_z_.assign(z.begin(), z.end());
  t_ = ctx.t;
  if (any_active_) out->forecasts = forecast(config_.horizon);
  last_ = std::move(out);
  return *last_;
}

std::vector<Forecast> Engine::forecast(std::size_t h_max) const {
  if (h_max < 1) throw ArgumentError("forecast horizon must be at least 1");
  std::vector<Forecast> out;
  if (!any_active_) return out;
  const auto S = static_cast<Eigen::Index>(locations_);
  History pseudo = history_;
  for (std::size_t h = 1; h <= h_max; ++h) {
    Forecast f;
    f.mean = Eigen::VectorXd::Zero(S);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(S, S);
    for (std::size_t m = 0; m < models_.size(); ++m) {
      const auto& grid = grids_[m];
      if (!grid.active) continue;
      const Model& model = models_[m];
      if (pseudo.size() < model.lag()) continue;
      const BlockDesign x = model.design(pseudo, last_z_);
      for (const auto& e : grid.entries) {
        const double w = std::exp(e.log_joint - log_evidence_);
        if (w == 0.0) continue;
        const PredictiveMoments mom = predictive_moments(e.stats, model.structure(), model.spec().prior, x);
        f.mean += w * mom.mean;
        second += w * (mom.covariance + mom.mean * mom.mean.transpose());
        f.covariance_finite = f.covariance_finite && mom.covariance_finite;
      }
    }
    f.covariance = second - f.mean * f.mean.transpose();
    pseudo.push(std::span<const double>(f.mean.data(), locations_));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace bocpdms
