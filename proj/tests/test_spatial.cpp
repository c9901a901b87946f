#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "bocpdms/errors.hpp"
#include "bocpdms/spatial.hpp"

using namespace bocpdms;

namespace {

using Ids = std::vector<std::size_t>;

// Paper-style 1-based location ids on the 3 x 3 grid.
Ids one_based(const Ids& ids) {
  Ids out;
  for (auto i : ids) out.push_back(i + 1);
  return out;
}

const std::vector<double> kFig2Radii{1.0, 1.5};

}  // namespace

TEST_CASE("grid rings around the centre of a 3 x 3 lattice") {
  const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
  CHECK(one_based(nbh.ring(4, 1)) == Ids{2, 4, 6, 8});
  CHECK(one_based(nbh.ring(4, 2)) == Ids{1, 3, 7, 9});
  CHECK(nbh.ring(4, 0) == Ids{4});
  CHECK(one_based(nbh.ring(0, 1)) == Ids{2, 4});
  CHECK(one_based(nbh.ring(0, 2)) == Ids{5});
  validate(nbh);
}

TEST_CASE("radius below the lattice spacing leaves every ring empty") {
  const std::vector<double> radii{0.5};
  const auto nbh = grid_neighbourhoods(3, 3, radii);
  for (std::size_t s = 0; s < 9; ++s) CHECK(nbh.ring(s, 1).empty());
}

TEST_CASE("precomputed distances on four nodes match hand enumeration") {
  Eigen::MatrixXd d(4, 4);
  d << 0, 2, 5, 9,  //
      2, 0, 3, 4,   //
      5, 3, 0, 1,   //
      9, 4, 1, 0;
  const std::vector<double> radii{2.0, 4.0};
  const auto nbh = build_from_distances(d, radii);
  CHECK(nbh.ring(0, 1) == Ids{1});
  CHECK(nbh.ring(0, 2).empty());
  CHECK(nbh.ring(1, 1) == Ids{0});
  CHECK(nbh.ring(1, 2) == Ids{2, 3});
  CHECK(nbh.ring(2, 1) == Ids{3});
  CHECK(nbh.ring(2, 2) == Ids{1});
  CHECK(nbh.ring(3, 1) == Ids{2});
  CHECK(nbh.ring(3, 2) == Ids{1});
}

TEST_CASE("distance matrices must be symmetric with a zero diagonal") {
  Eigen::MatrixXd d(2, 2);
  d << 0, 1, 2, 0;
  const std::vector<double> radii{1.5};
  CHECK_THROWS_AS(build_from_distances(d, radii), ArgumentError);
  d << 1, 1, 1, 0;
  CHECK_THROWS_AS(build_from_distances(d, radii), ArgumentError);
  const std::vector<double> bad{1.0, 1.0};
  CHECK_THROWS_AS(grid_neighbourhoods(2, 2, bad), ArgumentError);
}

TEST_CASE("ring boundary ties go to the inner ring") {
  const std::vector<std::vector<double>> pts{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
  const std::vector<double> radii{1.0, 2.0};
  const auto nbh = build_from_coords(pts, radii);
  CHECK(nbh.ring(0, 1) == Ids{1});
  CHECK(nbh.ring(0, 2) == Ids{2});
}

TEST_CASE("random point sets always yield symmetric disjoint rings") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::vector<double>> pts(2 + rep % 9);
    for (auto& p : pts) p = {u(rng), u(rng)};
    const std::vector<double> radii{0.5, 1.2, 2.0};
    const auto nbh = build_from_coords(pts, radii);
    CHECK_NOTHROW(validate(nbh));
    for (std::size_t s = 0; s < pts.size(); ++s) {
      std::set<std::size_t> seen;
      for (std::size_t i = 1; i <= 3; ++i) {
        for (auto o : nbh.ring(s, i)) {
          CHECK(seen.insert(o).second);
          const auto back = nbh.ring(o, i);
          CHECK(std::find(back.begin(), back.end(), s) != back.end());
        }
      }
    }
  }
}

TEST_CASE("the two-lag neighbourhood mask on the 3 x 3 grid") {
  const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
  const DecaySpec decay{{2, 1}};
  const auto mask = sparsity_pattern(2, nbh, decay, Pooling::none);
  auto row_count = [&](std::size_t lag, std::size_t s) {
    std::size_t n = 0;
    for (std::size_t o = 0; o < 9; ++o) n += mask.allowed(lag, s, o) ? 1 : 0;
    return n;
  };
  CHECK(row_count(1, 4) == 9);
  CHECK(row_count(2, 4) == 5);
  // Entry count = sum over locations of |N_0| + ... + |N_Pi(l)|.
  for (std::size_t l = 1; l <= 2; ++l) {
    std::size_t expected = 0;
    for (std::size_t s = 0; s < 9; ++s) {
      for (std::size_t i = 0; i <= decay.at(l); ++i) expected += nbh.ring(s, i).size();
    }
    CHECK(mask.entry_count(l) == expected);
  }
  for (std::size_t l = 1; l <= 2; ++l) {
    for (std::size_t s = 0; s < 9; ++s) {
      for (std::size_t o = 0; o < 9; ++o) CHECK(mask.allowed(l, s, o) == mask.allowed(l, o, s));
    }
  }
  const auto layout = make_layout(mask);
  CHECK(layout.rows[4].size() == 15);
}

TEST_CASE("zero decay keeps only the own lags") {
  const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
  const auto mask = sparsity_pattern(2, nbh, DecaySpec{{0, 0}}, Pooling::none);
  for (std::size_t l = 1; l <= 2; ++l) {
    for (std::size_t s = 0; s < 9; ++s) {
      for (std::size_t o = 0; o < 9; ++o) CHECK(mask.allowed(l, s, o) == (s == o));
    }
  }
}

TEST_CASE("decay beyond the number of rings is rejected") {
  const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
  CHECK_THROWS_AS(sparsity_pattern(1, nbh, DecaySpec{{3}}, Pooling::none), ArgumentError);
  CHECK_THROWS_AS(sparsity_pattern(2, nbh, DecaySpec{{1}}, Pooling::none), ArgumentError);
}

TEST_CASE("pooling modes count free lag parameters by distinct labels") {
  const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
  const DecaySpec decay{{2, 1}};
  // Global: one label per (lag, ring), ring 0 included: (2 + 1) + (1 + 1).
  CHECK(sparsity_pattern(2, nbh, decay, Pooling::global_ring).free_parameters() == 5);
  // Per location: every location has non-empty rings 0..2 on this grid.
  CHECK(sparsity_pattern(2, nbh, decay, Pooling::per_location_ring).free_parameters() == 9 * 5);
  CHECK(sparsity_pattern(2, nbh, decay, Pooling::none).free_parameters() ==
        sparsity_pattern(2, nbh, decay, Pooling::none).entry_count(1) +
            sparsity_pattern(2, nbh, decay, Pooling::none).entry_count(2));
}

TEST_CASE("lag rule and lag grid") {
  CHECK(lag_rule(1.0, 1.0) == 1);
  CHECK(lag_rule(2.0, 1.0) == 1);
  CHECK(lag_rule(1000.0, 1.0) == 2);
  CHECK(lag_grid(1, 1000, 1.0) == std::vector<std::size_t>{1, 2});
  CHECK(lag_grid(2, 2, 1.0) == std::vector<std::size_t>{1});
  std::size_t previous = 0;
  for (std::size_t t2 = 3; t2 < 200000; t2 = t2 * 3 / 2 + 1) {
    const auto g = lag_grid(1, t2, 1.3);
    CHECK(g.back() >= previous);
    previous = g.back();
    const auto inner = lag_grid(t2, t2, 1.3);
    for (auto l : inner) CHECK(std::find(g.begin(), g.end(), l) != g.end());
  }
  CHECK_THROWS_AS(lag_grid(5, 4, 1.0), ArgumentError);
  CHECK_THROWS_AS(lag_grid(1, 4, 0.0), ArgumentError);
}

TEST_CASE("design rows: intercept, exogenous inputs and lag terms") {
  SUBCASE("identity mask with one lag") {
    NeighbourhoodSystem own;
    own.rings.assign(2, {});
    const auto layout = make_layout(sparsity_pattern(1, own, DecaySpec{{0}}, Pooling::none));
    History h(1);
    const std::vector<double> y{3.0, -2.0};
    h.push(y);
    CHECK(design_row(h, {}, layout, 0) == std::vector<double>{1.0, 3.0});
    CHECK(design_row(h, {}, layout, 1) == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("global pooling sums each ring") {
    const auto nbh = grid_neighbourhoods(3, 3, kFig2Radii);
    const auto layout = make_layout(sparsity_pattern(1, nbh, DecaySpec{{2}}, Pooling::global_ring), 1);
    History h(1);
    std::vector<double> y(9);
    for (std::size_t i = 0; i < 9; ++i) y[i] = static_cast<double>(i + 1);
    h.push(y);
    const std::vector<double> z{0.5};
    const auto row = design_row(h, z, layout, 4);
    CHECK(row == std::vector<double>{1.0, 0.5, 5.0, 2 + 4 + 6 + 8, 1 + 3 + 7 + 9});
    // Lag coefficients are shared across locations, intercepts are not.
    CHECK(layout.rows[0].terms[0].coefficient == layout.rows[4].terms[0].coefficient);
    CHECK(layout.rows[0].intercept != layout.rows[4].intercept);
  }
  SUBCASE("an unrestricted neighbourhood mask reproduces the full VAR design") {
    const std::vector<double> wide{1.0, 3.0};
    const auto nbh = grid_neighbourhoods(3, 3, wide);
    const auto masked = make_layout(sparsity_pattern(2, nbh, DecaySpec{{2, 2}}, Pooling::none));
    const auto full = make_layout(full_mask(9, 2));
    History h(2);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 2; ++i) {
      std::vector<double> y(9);
      for (auto& v : y) v = n(rng);
      h.push(y);
    }
    for (std::size_t s = 0; s < 9; ++s) CHECK(design_row(h, {}, masked, s) == design_row(h, {}, full, s));
  }
  SUBCASE("insufficient history is a contract violation") {
    const auto layout = make_layout(full_mask(1, 2));
    History h(2);
    const std::vector<double> y{1.0};
    h.push(y);
    CHECK_THROWS_AS(design_row(h, {}, layout, 0), StateError);
  }
}
