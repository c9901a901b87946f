#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <numbers>
#include <random>

#include "bocpdms/errors.hpp"
#include "bocpdms/evalgen.hpp"
#include "bocpdms/logmath.hpp"
#include "support/oracles.hpp"

using namespace bocpdms;

namespace {

ScenarioSpec single_location(std::vector<Eigen::MatrixXd> coefficients, std::size_t T, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.locations = coefficients.empty() ? 1 : static_cast<std::size_t>(coefficients.front().rows());
  spec.length = T;
  spec.seed = seed;
  SegmentSpec seg;
  seg.coefficients = std::move(coefficients);
  spec.segments.push_back(std::move(seg));
  return spec;
}

ModelSpec intercept_model(const std::string& name, double a, double b, double g) {
  ModelSpec spec;
  spec.name = name;
  spec.lag = 0;
  spec.prior = {a, b, g, {}};
  return spec;
}

// Intercept-only segment marginal: y ~ t_{2a}(0, (b/a)(I + g 11')).
double segment_marginal(const std::vector<double>& y, double a, double b, double g) {
  const auto n = static_cast<Eigen::Index>(y.size());
  const Eigen::Map<const Eigen::VectorXd> v(y.data(), n);
  const Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(n, n) + g * Eigen::MatrixXd::Ones(n, n);
  const double q = v.dot(sigma.ldlt().solve(v));
  const double half = 0.5 * static_cast<double>(n);
  return std::lgamma(a + half) - std::lgamma(a) - half * std::log(2 * std::numbers::pi * b) -
         0.5 * std::log(sigma.determinant()) - (a + half) * std::log1p(q / (2 * b));
}

double log_add(double x, double y) {
  const double m = std::max(x, y);
  return m + std::log(std::exp(x - m) + std::exp(y - m));
}

}  // namespace

TEST_CASE("white noise has unit variance") {
  const auto sim = simulate(single_location({Eigen::MatrixXd::Zero(2, 2)}, 10000, 4));
  for (Eigen::Index s = 0; s < 2; ++s) {
    const Eigen::VectorXd col = sim.series.col(s);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(col.size() - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("AR(1) with coefficient 0.9 has matching lag-one autocorrelation") {
  const auto sim = simulate(single_location({Eigen::MatrixXd::Constant(1, 1, 0.9)}, 10000, 5));
  const Eigen::VectorXd y = sim.series.col(0);
  const double mean = y.mean();
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    den += (y(t) - mean) * (y(t) - mean);
    if (t > 0) num += (y(t) - mean) * (y(t - 1) - mean);
  }
  CHECK(std::abs(num / den - 0.9) < 0.02);
}

TEST_CASE("simulation is deterministic and records the planted truth") {
  const auto spec = load_scenario(BOCPDMS_SOURCE_DIR "/data/fig1_scenario.json");
  CHECK(spec.locations == 9);
  CHECK(spec.length == 500);
  REQUIRE(spec.segments.size() == 2);
  // 8-neighbourhood weights around the centre: own 0.3, edges 0.1, corners -0.15.
  const auto& a = spec.segments[0].coefficients.at(0);
  CHECK(a(4, 4) == 0.3);
  CHECK(a(4, 1) == 0.1);
  CHECK(a(4, 0) == -0.15);
  CHECK(spec.segments[1].coefficients.at(0)(4, 0) == 0.0);
  CHECK(spec.segments[1].coefficients.at(0)(4, 5) == 0.15);
  const auto first = simulate(spec);
  const auto second = simulate(spec);
  CHECK(first.series.rows() == 500);
  CHECK(std::memcmp(first.series.data(), second.series.data(), sizeof(double) * 500 * 9) == 0);
  REQUIRE(first.truth.entries.size() == 2);
  CHECK(first.truth.entries[0].cp_time == 1);
  CHECK(first.truth.entries[1].cp_time == 251);
  CHECK(first.truth.entries[1].model_id == 1);
  auto other = spec;
  other.seed = 2;
  CHECK_FALSE(simulate(other).series.isApprox(first.series));
}

TEST_CASE("unstable and malformed scenarios are rejected") {
  auto spec = single_location({Eigen::MatrixXd::Constant(1, 1, 1.05)}, 10, 0);
  try {
    spec.validate();
    FAIL("expected rejection");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("1.05") != std::string::npos);
  }
  CHECK(spectral_radius({Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::MatrixXd::Constant(1, 1, 0.3)}) ==
        doctest::Approx((0.5 + std::sqrt(0.25 + 1.2)) / 2));
  CHECK_THROWS_AS(parse_scenario("{\"T\": 10}"), ArgumentError);
  CHECK_THROWS_AS(parse_scenario("not json"), ArgumentError);
  CHECK_THROWS_AS(parse_scenario(R"({"locations": 1, "T": 5, "segments": [{"start": 2}]})"), ArgumentError);
  CHECK_THROWS_AS(
      parse_scenario(R"({"locations": 1, "T": 5, "segments": [{"start": 1}, {"start": 1}]})"), ArgumentError);
}

TEST_CASE("brute force on one observation is the first predictive") {
  ModelUniverse u{{intercept_model("c", 1.5, 0.7, 2.0)}, {}};
  Eigen::MatrixXd y(1, 1);
  y << 0.8;
  CHECK(brute_force_evidence(y, u, HazardSpec{5.0}) == doctest::Approx(segment_marginal({0.8}, 1.5, 0.7, 2.0)));
}

TEST_CASE("brute force on three observations sums the four segmentations") {
  const double a = 1.2;
  const double b = 0.8;
  const double g = 1.5;
  ModelUniverse u{{intercept_model("c", a, b, g)}, {}};
  const HazardSpec hz{2.0};
  Eigen::MatrixXd y(3, 1);
  y << 0.4, -1.1, 2.3;
  const double lh = std::log(0.5);
  auto seg = [&](std::vector<double> v) { return segment_marginal(v, a, b, g); };
  const std::vector<double> terms{
      2 * lh + seg({0.4, -1.1, 2.3}),
      lh + lh + seg({0.4}) + seg({-1.1, 2.3}),
      lh + lh + seg({0.4, -1.1}) + seg({2.3}),
      lh + lh + seg({0.4}) + seg({-1.1}) + seg({2.3}),
  };
  double hand = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) hand = log_add(hand, terms[i]);
  CHECK(std::abs(brute_force_evidence(y, u, hz) - hand) < 1e-12);
  EngineConfig cfg;
  cfg.hazard = hz;
  cfg.mode = RecursionMode::strict;
  const auto outs = testing::run_engine(y, u, cfg);
  CHECK(std::abs(outs.back().log_evidence - hand) < 1e-9);
  const auto best = brute_force_map(y, u, hz);
  CHECK(best.log_density == doctest::Approx(*std::max_element(terms.begin(), terms.end())));
}

TEST_CASE("identical models collapse to the single-model evidence") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd y(7, 2);
  for (Eigen::Index t = 0; t < 7; ++t) y.row(t) << n(rng), n(rng);
  ModelSpec m;
  m.name = "a";
  m.lag = 1;
  m.prior = {1.3, 0.9, 1.1, {}};
  ModelSpec twin = m;
  twin.name = "b";
  const double one = brute_force_evidence(y, ModelUniverse{{m}, {}}, HazardSpec{3.0});
  const double two = brute_force_evidence(y, ModelUniverse{{m, twin}, {}}, HazardSpec{3.0});
  CHECK(two == doctest::Approx(one).epsilon(1e-12));
}

TEST_CASE("brute force refuses large or mixed-lag problems") {
  ModelUniverse u{{intercept_model("c", 1, 1, 1)}, {}};
  CHECK_THROWS_AS(brute_force_evidence(Eigen::MatrixXd::Zero(13, 1), u, HazardSpec{2.0}), ArgumentError);
  ModelSpec lagged = intercept_model("d", 1, 1, 1);
  lagged.lag = 1;
  CHECK_THROWS_AS(brute_force_evidence(Eigen::MatrixXd::Zero(5, 1), ModelUniverse{{u.members[0], lagged}, {}}, HazardSpec{2.0}),
                  ArgumentError);
}

TEST_CASE("metrics") {
  std::vector<Eigen::VectorXd> pred(4, Eigen::VectorXd::Zero(2));
  std::vector<Eigen::VectorXd> actual(4, Eigen::VectorXd::Zero(2));
  std::vector<double> dens(4, gaussian_logpdf(0.0, 0.0, 1.0));
  const auto m = metrics(pred, actual, dens);
  CHECK(m.mse == 0.0);
  CHECK(m.mse_half_width == 0.0);
  CHECK(m.nll == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)));
  CHECK(m.nll == doctest::Approx(0.9189).epsilon(1e-4));
  CHECK(m.count == 4);
  CHECK_THROWS_AS(metrics(std::span<const Eigen::VectorXd>{}, std::span<const Eigen::VectorXd>{}, std::span<const double>{}),
                  ArgumentError);
  dens.pop_back();
  CHECK_THROWS_AS(metrics(pred, actual, dens), ArgumentError);
}

TEST_CASE("metric error bars shrink with the square root of the sample size") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> log_n;
  std::vector<double> log_hw;
  for (std::size_t size : {100, 1000, 10000, 100000}) {
    std::vector<Eigen::VectorXd> pred(size, Eigen::VectorXd::Zero(1));
    std::vector<Eigen::VectorXd> actual;
    std::vector<double> dens;
    for (std::size_t i = 0; i < size; ++i) {
      const double x = n(rng);
      actual.push_back(Eigen::VectorXd::Constant(1, x));
      dens.push_back(gaussian_logpdf(x, 0.0, 1.0));
    }
    const auto m = metrics(pred, actual, dens);
    log_n.push_back(std::log(static_cast<double>(size)));
    log_hw.push_back(std::log(m.mse_half_width));
  }
  const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / 4;
  const double my = std::accumulate(log_hw.begin(), log_hw.end(), 0.0) / 4;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    sxy += (log_n[i] - mx) * (log_hw[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(-0.5).epsilon(0.1));
}

TEST_CASE("SGV of the windowed argmax indicators") {
  SUBCASE("constant argmax") {
    const std::vector<std::vector<double>> post(10, {0.9, 0.1});
    const auto trace = sgv_trace(post, 8);
    CHECK(trace.back().sgv == 0.0);
    CHECK(trace.back().reduced_sgv == 0.0);
    CHECK(trace.back().log_sgv == kNegInf);
    CHECK(trace.front().shortened);
    CHECK_FALSE(trace.back().shortened);
  }
  SUBCASE("two alternating models") {
    std::vector<std::vector<double>> post;
    for (int i = 0; i < 20; ++i) post.push_back(i % 2 ? std::vector<double>{0.2, 0.8} : std::vector<double>{0.8, 0.2});
    const auto trace = sgv_trace(post, 8);
    CHECK(trace.back().sgv == 0.0);
    // Bernoulli(1/2) sample variance over 8 draws.
    CHECK(trace.back().reduced_sgv == doctest::Approx(0.25 * 8.0 / 7.0));
  }
  SUBCASE("three models used uniformly") {
    const std::size_t n = 3000;
    std::vector<std::vector<double>> post;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(3, 0.1);
      p[i % 3] = 0.8;
      post.push_back(p);
    }
    const auto trace = sgv_trace(post, n);
    CHECK(trace.back().sgv == 0.0);
    // Multinomial covariance diag(p) - pp' with p = 1/3, last category dropped.
    Eigen::Matrix2d cov;
    cov << 2.0 / 9, -1.0 / 9, -1.0 / 9, 2.0 / 9;
    const double expected = std::sqrt(cov.determinant()) * static_cast<double>(n) / static_cast<double>(n - 1);
    CHECK(trace.back().reduced_sgv == doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(0.19245).epsilon(1e-3));
  }
  CHECK_THROWS_AS(sgv_trace({{1.0}}, 1), ArgumentError);
}
