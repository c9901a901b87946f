#include <doctest.h>

#include <cmath>
#include <random>

#include "bocpdms/engine.hpp"
#include "bocpdms/errors.hpp"
#include "bocpdms/evalgen.hpp"
#include "bocpdms/logmath.hpp"
#include "support/oracles.hpp"

using namespace bocpdms;
using testing::row_of;
using testing::run_engine;

namespace {

ModelSpec ar(const std::string& name, std::size_t lag, double a = 1.0, double b = 1.0, double g = 1.0) {
  ModelSpec spec;
  spec.name = name;
  spec.lag = lag;
  spec.prior = {a, b, g, {}};
  return spec;
}

Eigen::MatrixXd shifted_series(std::size_t T, std::size_t S, std::size_t cp, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(S));
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    for (Eigen::Index s = 0; s < y.cols(); ++s) y(t, s) = n(rng) + (static_cast<std::size_t>(t) >= cp ? shift : 0.0);
  }
  return y;
}

EngineConfig config_with(double lambda, RecursionMode mode, std::size_t r_max = 0) {
  EngineConfig c;
  c.hazard.lambda = lambda;
  c.mode = mode;
  c.r_max = r_max;
  return c;
}

void check_invariants(const StepOutput& out, std::size_t M) {
  double total = 0.0;
  std::vector<double> rows(M, 0.0);
  std::map<std::size_t, double> cols;
  for (const auto& cell : out.joint_posterior) {
    CHECK(cell.probability >= 0.0);
    total += cell.probability;
    rows[cell.model_id] += cell.probability;
    cols[cell.run_length] += cell.probability;
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
  for (std::size_t m = 0; m < M; ++m) {
    CHECK(std::abs(rows[m] - out.model_posterior[m]) < 1e-9);
    double rld_sum = 0.0;
    for (const auto& p : out.model_rld[m]) {
      rld_sum += p.probability;
      double joint = 0.0;
      for (const auto& cell : out.joint_posterior) {
        if (cell.model_id == m && cell.run_length == p.run_length) joint = cell.probability;
      }
      CHECK(std::abs(p.probability * out.model_posterior[m] - joint) < 1e-9);
    }
    if (out.model_posterior[m] > 0.0) CHECK(std::abs(rld_sum - 1.0) < 1e-9);
  }
  for (const auto& p : out.global_rld) CHECK(std::abs(p.probability - cols[p.run_length]) < 1e-9);
}

}  // namespace

TEST_CASE("hazard validation and logs") {
  HazardSpec h{100.0};
  CHECK(h.log_h() == doctest::Approx(std::log(0.01)));
  CHECK(h.log_1mh() == doctest::Approx(std::log(0.99)));
  CHECK(HazardSpec{1.0}.log_1mh() == kNegInf);
  CHECK_THROWS_AS(HazardSpec{0.5}.validate(), ArgumentError);
  CHECK_THROWS_AS(HazardSpec{std::numeric_limits<double>::infinity()}.validate(), ArgumentError);
  CHECK(parse_mode("strict-ppm") == RecursionMode::strict);
  CHECK(parse_mode("paper-faithful") == RecursionMode::paper);
  CHECK_THROWS_AS(parse_mode("fast"), ArgumentError);
}

TEST_CASE("growth update") {
  CHECK(growth_log_joint(-1.0, -2.0, HazardSpec{100.0}, 0.0, RecursionMode::paper) ==
        doctest::Approx(-3.0 + std::log(0.99)));
  CHECK(growth_log_joint(-1.0, -2.0, HazardSpec{100.0}, 0.0, RecursionMode::paper) == doctest::Approx(-3.01005).epsilon(1e-6));
  CHECK(growth_log_joint(-1.0, -2.0, HazardSpec{1.0}, 0.0, RecursionMode::strict) == kNegInf);
  const double paper = growth_log_joint(-1.0, -2.0, HazardSpec{10.0}, std::log(0.25), RecursionMode::paper);
  const double strict = growth_log_joint(-1.0, -2.0, HazardSpec{10.0}, std::log(0.25), RecursionMode::strict);
  CHECK(paper - strict == doctest::Approx(std::log(0.25)));
}

TEST_CASE("changepoint update") {
  const std::vector<double> one{-2.0};
  CHECK(cp_log_joint(-1.0, 0.0, HazardSpec{2.0}, one) == doctest::Approx(-1.0 + std::log(0.5) - 2.0));
  CHECK(cp_log_joint(-1.0, 0.0, HazardSpec{2.0}, one) == doctest::Approx(-3.6931).epsilon(1e-4));
  const std::vector<double> two{-2.0, -2.0};
  CHECK(cp_log_joint(-1.0, 0.0, HazardSpec{2.0}, two) - cp_log_joint(-1.0, 0.0, HazardSpec{2.0}, one) ==
        doctest::Approx(std::log(2.0)));
  const std::vector<double> three{-1.0, -3.5, -0.2};
  CHECK(cp_log_joint(0.0, 0.0, HazardSpec{7.0}, three) == doctest::Approx(std::log(1.0 / 7.0) + log_sum_exp(three)));
  CHECK_THROWS_AS(cp_log_joint(0.0, 0.0, HazardSpec{7.0}, std::span<const double>{}), StateError);
}

TEST_CASE("Bayes factors") {
  const std::vector<double> uniform{0.5, 0.5};
  const std::vector<double> post{0.8, 0.2};
  CHECK(bayes_factor(post, uniform, 0, 1).value == doctest::Approx(4.0));
  CHECK(bayes_factor(post, uniform, 1, 1).value == 1.0);
  const std::vector<double> even{0.5, 0.5};
  const std::vector<double> q{0.25, 0.75};
  CHECK(bayes_factor(even, q, 0, 1).value == doctest::Approx(3.0));
  const std::vector<double> zero{1.0, 0.0};
  const auto bf = bayes_factor(zero, uniform, 0, 1);
  CHECK(bf.saturated);
  CHECK(std::isinf(bf.value));
  CHECK_THROWS_AS(bayes_factor(post, uniform, 0, 2), ArgumentError);
}

TEST_CASE("pruning keeps the top entries and always the changepoint hypothesis") {
  auto make = [](std::vector<double> probs) {
    RunLengthGrid g;
    g.active = true;
    for (std::size_t r = 0; r < probs.size(); ++r) {
      RunLengthEntry e;
      e.run_length = r;
      e.log_joint = std::log(probs[r]);
      g.entries.push_back(std::move(e));
    }
    return g;
  };
  auto lengths = [](const RunLengthGrid& g) {
    std::vector<std::size_t> out;
    for (const auto& e : g.entries) out.push_back(e.run_length);
    return out;
  };
  auto g = make({0.2, 0.5, 0.3});
  prune(g, 2);
  CHECK(lengths(g) == std::vector<std::size_t>{0, 1, 2});
  g = make({0.1, 0.5, 0.3, 0.1});
  prune(g, 2);
  CHECK(lengths(g) == std::vector<std::size_t>{0, 1, 2});
  CHECK(g.entries[1].log_joint == std::log(0.5));
  g = make({0.5, 0.3, 0.2});
  prune(g, 2);
  CHECK(lengths(g) == std::vector<std::size_t>{0, 1});
  g = make({0.1, 0.2, 0.3});
  prune(g, 3);
  CHECK(lengths(g) == std::vector<std::size_t>{0, 1, 2});
  g = make({0.1, 0.3, 0.3, 0.3});
  prune(g, 2);
  CHECK(lengths(g) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(prune(g, 0), ArgumentError);
}

TEST_CASE("model activation is staggered by lag") {
  ModelUniverse u{{ar("lag0", 0), ar("lag2", 2)}, {}};
  Engine engine(u, config_with(10.0, RecursionMode::paper), 1);
  const std::vector<double> y{0.3};
  engine.step(y);
  CHECK(engine.grids()[0].active);
  CHECK_FALSE(engine.grids()[1].active);
  CHECK(engine.last().model_posterior[1] == 0.0);
  engine.step(y);
  CHECK_FALSE(engine.grids()[1].active);
  engine.step(y);
  CHECK(engine.grids()[1].active);
  REQUIRE(engine.grids()[1].entries.size() == 1);
  CHECK(engine.grids()[1].entries[0].run_length == 0);
}

TEST_CASE("activation mass is the model prior times the first predictive") {
  ModelUniverse u{{ar("x", 1, 1.0, 2.0, 0.5), ar("y", 1, 3.0, 1.0, 2.0)}, {}};
  Engine engine(u, config_with(10.0, RecursionMode::paper), 1);
  const std::vector<double> y1{0.4};
  const std::vector<double> y2{-1.3};
  engine.step(y1);
  engine.step(y2);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& e = engine.grids()[m].entries.at(0);
    const Eigen::MatrixXd x{{1.0, 0.4}};
    const double pred = testing::direct_predictive(u.members[m].prior, {}, {}, x, Eigen::VectorXd::Constant(1, -1.3));
    CHECK(e.log_joint - pred == doctest::Approx(std::log(0.5)));
  }
}

TEST_CASE("single-model posteriors and mode equivalence") {
  const auto y = shifted_series(40, 2, 20, 3.0, 2);
  ModelUniverse u{{ar("var1", 1)}, {}};
  const auto paper = run_engine(y, u, config_with(20.0, RecursionMode::paper));
  const auto strict = run_engine(y, u, config_with(20.0, RecursionMode::strict));
  for (std::size_t t = 0; t < paper.size(); ++t) {
    if (!paper[t].active[0]) continue;
    CHECK(paper[t].model_posterior[0] == doctest::Approx(1.0));
    CHECK(paper[t].log_evidence == doctest::Approx(strict[t].log_evidence).epsilon(1e-13));
  }
}

TEST_CASE("identical models share the posterior evenly") {
  const auto y = shifted_series(25, 1, 10, 2.0, 3);
  ModelUniverse u{{ar("a", 1), ar("b", 1)}, {}};
  for (auto mode : {RecursionMode::paper, RecursionMode::strict}) {
    for (const auto& out : run_engine(y, u, config_with(8.0, mode))) {
      if (!out.active[0]) continue;
      CHECK(out.model_posterior[0] == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(out.model_posterior[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("posterior normalization and marginal consistency") {
  std::mt19937_64 rng(44);
  for (int rep = 0; rep < 10; ++rep) {
    auto c = testing::random_case(rng, 30, rep % 2 == 0);
    EngineConfig cfg = config_with(c.hazard.lambda, rep % 3 == 0 ? RecursionMode::strict : RecursionMode::paper,
                                   rep % 4 == 0 ? 5 : 0);
    for (const auto& out : run_engine(c.y, c.universe, cfg)) {
      if (out.joint_posterior.empty()) continue;
      check_invariants(out, c.universe.members.size());
    }
  }
}

TEST_CASE("paper mode matches the unrolled recursion") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto c = testing::random_case(rng, 8, rep % 2 == 0);
    const auto unrolled = testing::unroll(c.y, c.universe, c.hazard, RecursionMode::paper);
    const auto outs = run_engine(c.y, c.universe, config_with(c.hazard.lambda, RecursionMode::paper));
    for (std::size_t t = 0; t < outs.size(); ++t) {
      if (outs[t].joint_posterior.empty()) continue;
      CHECK(std::abs(outs[t].log_evidence - unrolled.log_evidence[t]) < 1e-12);
      for (const auto& cell : outs[t].joint_posterior) {
        CHECK(std::abs(cell.probability - unrolled.joint[t][cell.model_id][cell.run_length]) < 1e-12);
      }
      for (std::size_t m = 0; m < c.universe.members.size(); ++m) {
        CHECK(std::abs(outs[t].model_posterior[m] - unrolled.model_posterior[t][m]) < 1e-12);
      }
      for (const auto& p : outs[t].global_rld) CHECK(std::abs(p.probability - unrolled.global_rld[t][p.run_length]) < 1e-12);
    }
  }
}

TEST_CASE("strict mode matches exhaustive enumeration") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 15; ++rep) {
    auto c = testing::random_case(rng, 7);
    const auto outs = run_engine(c.y, c.universe, config_with(c.hazard.lambda, RecursionMode::strict));
    CHECK(std::abs(outs.back().log_evidence - brute_force_evidence(c.y, c.universe, c.hazard)) < 1e-9);
    const auto best = brute_force_map(c.y, c.universe, c.hazard);
    CHECK(std::abs(outs.back().map.log_map_density - best.log_density) < 1e-9);
    REQUIRE(outs.back().map.entries.size() == best.segmentation.entries.size());
    for (std::size_t i = 0; i < best.segmentation.entries.size(); ++i) {
      CHECK(outs.back().map.entries[i].cp_time == best.segmentation.entries[i].cp_time);
      CHECK(outs.back().map.entries[i].model_id == best.segmentation.entries[i].model_id);
    }
  }
}

TEST_CASE("MAP segmentation on a stream without a change is one segment") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(30, 1, 0.1);
  ModelUniverse u{{ar("c", 0)}, {}};
  const auto outs = run_engine(y, u, config_with(100.0, RecursionMode::paper));
  REQUIRE(outs.back().map.entries.size() == 1);
  CHECK(outs.back().map.entries[0].cp_time == 1);
  CHECK(outs.back().map.changepoints() == 0);
}

TEST_CASE("MAP segmentation finds a planted mean shift") {
  const auto y = shifted_series(100, 1, 49, 5.0, 12);
  ModelUniverse u{{ar("c", 0)}, {}};
  const auto outs = run_engine(y, u, config_with(100.0, RecursionMode::paper, 50));
  const auto& map = outs.back().map;
  REQUIRE(map.changepoints() == 1);
  CHECK(map.entries[1].cp_time >= 48);
  CHECK(map.entries[1].cp_time <= 52);
}

TEST_CASE("pruning with R_max at least T is exact") {
  const auto y = shifted_series(20, 2, 10, 2.0, 8);
  ModelUniverse u{{ar("a", 1), ar("b", 0, 2.0, 1.0, 3.0)}, {}};
  const auto full = run_engine(y, u, config_with(5.0, RecursionMode::paper));
  const auto pruned = run_engine(y, u, config_with(5.0, RecursionMode::paper, 20));
  for (std::size_t t = 0; t < full.size(); ++t) CHECK(full[t].log_evidence == pruned[t].log_evidence);
}

TEST_CASE("pruning bounds the retained hypotheses") {
  const auto y = shifted_series(200, 1, 100, 1.0, 9);
  ModelUniverse u{{ar("a", 1), ar("b", 2)}, {}};
  Engine engine(u, config_with(50.0, RecursionMode::paper, 10), 1);
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    engine.step(row_of(y, static_cast<std::size_t>(t)));
    for (const auto& g : engine.grids()) {
      CHECK(g.entries.size() <= 11);
      for (std::size_t i = 1; i < g.entries.size(); ++i) CHECK(g.entries[i].run_length > g.entries[i - 1].run_length);
      if (g.active) CHECK(g.entries.front().run_length == 0);
    }
  }
}

TEST_CASE("forecasts are posterior mixtures of the model predictives") {
  SUBCASE("intercept-only model after one observation") {
    ModelUniverse u{{ar("c", 0)}, {}};
    EngineConfig cfg = config_with(10.0, RecursionMode::paper);
    cfg.horizon = 2;
    Engine engine(u, cfg, 1);
    const std::vector<double> y{3.0};
    const auto& out = engine.step(y);
    REQUIRE(out.forecasts.size() == 2);
    CHECK(out.forecasts[0].mean(0) == doctest::Approx(1.5));
    CHECK(out.forecasts[1].mean(0) == out.forecasts[0].mean(0));
  }
  SUBCASE("mixture mean and covariance over the joint posterior") {
    const auto y = shifted_series(12, 2, 6, 2.0, 10);
    ModelUniverse u{{ar("a", 1, 2.0, 1.0, 1.0), ar("b", 2, 3.0, 2.0, 0.5)}, {}};
    Engine engine(u, config_with(4.0, RecursionMode::paper), 2);
    for (Eigen::Index t = 0; t < y.rows(); ++t) engine.step(row_of(y, static_cast<std::size_t>(t)));
    const auto& out = engine.last();
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (std::size_t m = 0; m < 2; ++m) {
      History h(u.members[m].lag);
      for (Eigen::Index t = y.rows() - static_cast<Eigen::Index>(u.members[m].lag); t < y.rows(); ++t) {
        h.push(row_of(y, static_cast<std::size_t>(t)));
      }
      const auto x = engine.models()[m].design(h, {});
      for (const auto& e : engine.grids()[m].entries) {
        double w = 0.0;
        for (const auto& cell : out.joint_posterior) {
          if (cell.model_id == m && cell.run_length == e.run_length) w = cell.probability;
        }
        const auto pm = predictive_moments(e.stats, engine.models()[m].structure(), u.members[m].prior, x);
        mean += w * pm.mean;
        second += w * (pm.covariance + pm.mean * pm.mean.transpose());
      }
    }
    CHECK((out.forecasts[0].mean - mean).norm() < 1e-12);
    CHECK((out.forecasts[0].covariance - (second - mean * mean.transpose())).norm() < 1e-10);
  }
  SUBCASE("invalid horizon") {
    ModelUniverse u{{ar("c", 0)}, {}};
    Engine engine(u, config_with(10.0, RecursionMode::paper), 1);
    const std::vector<double> y{1.0};
    engine.step(y);
    CHECK_THROWS_AS(engine.forecast(0), ArgumentError);
  }
}

TEST_CASE("one-step diagnostics use the previous forecast") {
  const auto y = shifted_series(10, 1, 5, 1.0, 13);
  ModelUniverse u{{ar("c", 0)}, {}};
  // Without changepoint mass the mixture over r_{t-1} is p(y_t | y_{1:t-1}).
  const auto outs = run_engine(y, u, config_with(1e12, RecursionMode::paper));
  CHECK_FALSE(outs[0].has_one_step);
  for (std::size_t t = 1; t < outs.size(); ++t) {
    REQUIRE(outs[t].has_one_step);
    CHECK(outs[t].one_step_error(0) == doctest::Approx(y(static_cast<Eigen::Index>(t), 0) - outs[t - 1].forecasts[0].mean(0)));
    CHECK(std::abs(outs[t].one_step_log_density - (outs[t].log_evidence - outs[t - 1].log_evidence)) < 1e-9);
  }
}

TEST_CASE("threaded model stage matches the serial result") {
  const auto y = shifted_series(60, 2, 30, 2.0, 21);
  ModelUniverse u{{ar("a", 1), ar("b", 2), ar("c", 0)}, {}};
  EngineConfig serial = config_with(20.0, RecursionMode::paper, 15);
  serial.hyperopt.enabled = true;
  EngineConfig threaded = serial;
  threaded.threads = 3;
  const auto a = run_engine(y, u, serial);
  const auto b = run_engine(y, u, threaded);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].log_evidence == b[t].log_evidence);
    CHECK(a[t].model_posterior == b[t].model_posterior);
  }
}

TEST_CASE("input validation and collapse") {
  ModelUniverse u{{ar("c", 0)}, {}};
  Engine engine(u, config_with(10.0, RecursionMode::paper), 1);
  CHECK_THROWS_AS(engine.last(), StateError);
  const std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(engine.step(wrong), ArgumentError);
  const std::vector<double> nan{std::nan("")};
  CHECK_THROWS_AS(engine.step(nan), ArgumentError);
  const std::vector<double> ok{0.5};
  engine.step(ok);
  const std::vector<double> huge{1e300};
  try {
    engine.step(huge);
    FAIL("expected a numerical collapse");
  } catch (const NumericalCollapse& e) {
    CHECK(e.t() == 2);
    REQUIRE(e.last_valid() != nullptr);
    CHECK(e.last_valid()->t == 1);
  }
  CHECK_THROWS_AS(engine.step(ok), StateError);
  CHECK_THROWS_AS(Engine(ModelUniverse{}, EngineConfig{}, 1), ArgumentError);
  CHECK_THROWS_AS(Engine(ModelUniverse{{ar("a", 0)}, {0.5}}, EngineConfig{}, 1), ArgumentError);
}
