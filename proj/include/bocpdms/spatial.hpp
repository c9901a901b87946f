#pragma once

// Neighbourhood systems, spatially structured coefficient masks and the
// per-location regressor layout they induce.

#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bocpdms {

// Ring i of location s is rings[s][i - 1] (sorted ids); ring 0 is {s} and is
// not stored.
struct NeighbourhoodSystem {
  std::vector<std::vector<std::vector<std::size_t>>> rings;

  std::size_t num_locations() const { return rings.size(); }
  std::size_t num_rings() const { return rings.empty() ? 0 : rings.front().size(); }
  std::vector<std::size_t> ring(std::size_t s, std::size_t i) const;
};

// N_i(s) = { s' != s : radii[i-2] < d(s, s') <= radii[i-1] } (radii[-1] = 0).
NeighbourhoodSystem build_from_coords(const std::vector<std::vector<double>>& coords,
                                      std::span<const double> radii);
NeighbourhoodSystem build_from_distances(const Eigen::MatrixXd& distances,
                                         std::span<const double> radii);
// Row-major rows x cols lattice with unit spacing; location id = r * cols + c.
NeighbourhoodSystem grid_neighbourhoods(std::size_t rows, std::size_t cols,
                                        std::span<const double> radii);

// Throws ArgumentError unless rings are disjoint, exclude s, and symmetric.
void validate(const NeighbourhoodSystem& nbh);

// max_ring[l - 1] = Pi(l): largest ring index influencing a location at lag l.
struct DecaySpec {
  std::vector<std::size_t> max_ring;

  std::size_t at(std::size_t lag) const { return max_ring.at(lag - 1); }
};

enum class Pooling { none, per_location_ring, global_ring };

Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling pooling);

struct SparsityMask {
  std::size_t locations = 0;
  std::size_t lags = 0;
  Pooling pooling = Pooling::none;
  // ring_index[l - 1][s * S + s'] = ring of s' around s, or -1 when masked out.
  std::vector<std::vector<int>> ring_index;
  // Coefficient-group label per allowed entry (same layout; -1 when masked).
  std::vector<std::vector<long>> group_label;

  bool allowed(std::size_t lag, std::size_t s, std::size_t source) const {
    return ring_index[lag - 1][s * locations + source] >= 0;
  }
  std::size_t entry_count(std::size_t lag) const;
  // Distinct lag-coefficient groups. Ring 0 (the own lag) counts as a group,
  // so global pooling yields sum_l (Pi(l) + 1) when every ring is non-empty.
  std::size_t free_parameters() const;
};

SparsityMask sparsity_pattern(std::size_t lags, const NeighbourhoodSystem& nbh,
                              const DecaySpec& decay, Pooling pooling);
// Unrestricted VAR: every location influences every other at every lag.
SparsityMask full_mask(std::size_t locations, std::size_t lags);

// Lag length rule L(T) = max(1, floor(C (T / ln T)^(1/6))), with L(T) = 1 for T <= 2.
std::size_t lag_rule(double t, double c);
// { L : L(T1) <= L <= L(T2) }
std::vector<std::size_t> lag_grid(std::size_t t1, std::size_t t2, double c = 1.0);

struct RegressorTerm {
  std::size_t lag;
  std::vector<std::size_t> sources;  // summed when pooled
  std::size_t coefficient;
};

struct LocationDesign {
  std::size_t intercept;
  std::vector<std::size_t> exogenous;
  std::vector<RegressorTerm> terms;

  std::size_t size() const { return 1 + exogenous.size() + terms.size(); }
  // Coefficient ids in regressor order.
  std::vector<std::size_t> coefficients() const;
};

struct DesignLayout {
  std::size_t locations = 0;
  std::size_t lags = 0;
  std::size_t exogenous = 0;
  std::size_t coefficients = 0;
  std::vector<LocationDesign> rows;
};

DesignLayout make_layout(const SparsityMask& mask, std::size_t exogenous = 0);

// The most recent observations, newest first: lagged(1) = y_{t-1}.
class History {
 public:
  explicit History(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(std::span<const double> y);
  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::span<const double> lagged(std::size_t lag) const { return buffer_.at(lag - 1); }

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> buffer_;
};

// Regressors for location s in layout order: intercept 1, z, lag terms.
void design_row(const History& history, std::span<const double> z, const DesignLayout& layout,
                std::size_t s, std::span<double> out);
std::vector<double> design_row(const History& history, std::span<const double> z,
                               const DesignLayout& layout, std::size_t s);

}  // namespace bocpdms
