#include "bocpdms/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bocpdms/errors.hpp"

namespace bocpdms {
namespace {

void check_radii(std::span<const double> radii) {
  if (radii.empty()) throw ArgumentError("neighbourhood radii must not be empty");
  double previous = 0.0;
  for (double r : radii) {
    if (!(r > previous)) throw ArgumentError("neighbourhood radii must be positive and strictly increasing");
    previous = r;
  }
}

NeighbourhoodSystem rings_from(const Eigen::MatrixXd& d, std::span<const double> radii) {
  const auto n = static_cast<std::size_t>(d.rows());
  NeighbourhoodSystem nbh;
  nbh.rings.assign(n, std::vector<std::vector<std::size_t>>(radii.size()));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t other = 0; other < n; ++other) {
      if (other == s) continue;
      const double dist = d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(other));
      double inner = 0.0;
      for (std::size_t i = 0; i < radii.size(); ++i) {
        if (dist > inner && dist <= radii[i]) {
          nbh.rings[s][i].push_back(other);
          break;
        }
        inner = radii[i];
      }
    }
  }
  return nbh;
}

}  // namespace

std::vector<std::size_t> NeighbourhoodSystem::ring(std::size_t s, std::size_t i) const {
  if (i == 0) return {s};
  return rings.at(s).at(i - 1);
}

NeighbourhoodSystem build_from_coords(const std::vector<std::vector<double>>& coords,
                                      std::span<const double> radii) {
  check_radii(radii);
  const auto n = static_cast<Eigen::Index>(coords.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& a = coords[static_cast<std::size_t>(i)];
      const auto& b = coords[static_cast<std::size_t>(j)];
      if (a.size() != b.size()) throw ArgumentError("coordinates have inconsistent dimension");
      double sq = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
      d(i, j) = std::sqrt(sq);
    }
  }
  return rings_from(d, radii);
}

NeighbourhoodSystem build_from_distances(const Eigen::MatrixXd& distances,
                                         std::span<const double> radii) {
  check_radii(radii);
  if (distances.rows() != distances.cols()) throw ArgumentError("distance matrix must be square");
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    if (distances(i, i) != 0.0) throw ArgumentError("distance matrix must have a zero diagonal");
    for (Eigen::Index j = 0; j < i; ++j) {
      if (distances(i, j) != distances(j, i)) {
        throw ArgumentError("distance matrix is not symmetric at (" + std::to_string(i + 1) + ", " +
                            std::to_string(j + 1) + ")");
      }
    }
  }
  return rings_from(distances, radii);
}

NeighbourhoodSystem grid_neighbourhoods(std::size_t rows, std::size_t cols,
                                        std::span<const double> radii) {
  std::vector<std::vector<double>> coords;
  coords.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      coords.push_back({static_cast<double>(r), static_cast<double>(c)});
    }
  }
  return build_from_coords(coords, radii);
}

void validate(const NeighbourhoodSystem& nbh) {
  const std::size_t n = nbh.num_locations();
  for (std::size_t s = 0; s < n; ++s) {
    if (nbh.rings[s].size() != nbh.num_rings()) throw ArgumentError("ragged neighbourhood system");
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < nbh.rings[s].size(); ++i) {
      for (std::size_t other : nbh.rings[s][i]) {
        if (other >= n || other == s) throw ArgumentError("ring contains an invalid location");
        if (!seen.insert(other).second) throw ArgumentError("rings of a location are not disjoint");
        const auto& back = nbh.rings[other][i];
        if (!std::binary_search(back.begin(), back.end(), s)) {
          throw ArgumentError("neighbourhood system is not symmetric");
        }
      }
    }
  }
}

Pooling parse_pooling(const std::string& name) {
  if (name == "none") return Pooling::none;
  if (name == "per-location-ring" || name == "per_location_ring") return Pooling::per_location_ring;
  if (name == "global-ring" || name == "global_ring") return Pooling::global_ring;
  throw ArgumentError("unknown pooling mode: " + name);
}

std::string to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::none: return "none";
    case Pooling::per_location_ring: return "per-location-ring";
    case Pooling::global_ring: return "global-ring";
  }
  return "none";
}

std::size_t SparsityMask::entry_count(std::size_t lag) const {
  return static_cast<std::size_t>(
      std::count_if(ring_index[lag - 1].begin(), ring_index[lag - 1].end(), [](int r) { return r >= 0; }));
}

std::size_t SparsityMask::free_parameters() const {
  std::set<long> labels;
  for (const auto& lag_labels : group_label) {
    for (long label : lag_labels) {
      if (label >= 0) labels.insert(label);
    }
  }
  return labels.size();
}

SparsityMask sparsity_pattern(std::size_t lags, const NeighbourhoodSystem& nbh,
                              const DecaySpec& decay, Pooling pooling) {
  if (decay.max_ring.size() < lags) throw ArgumentError("decay map must cover every lag");
  const std::size_t n = nbh.num_locations();
  SparsityMask mask;
  mask.locations = n;
  mask.lags = lags;
  mask.pooling = pooling;
  mask.ring_index.assign(lags, std::vector<int>(n * n, -1));
  mask.group_label.assign(lags, std::vector<long>(n * n, -1));
  long next_label = 0;
  for (std::size_t l = 1; l <= lags; ++l) {
    const std::size_t pi = decay.at(l);
    if (pi > nbh.num_rings()) {
      throw ArgumentError("decay value " + std::to_string(pi) + " at lag " + std::to_string(l) +
                          " exceeds the number of rings " + std::to_string(nbh.num_rings()));
    }
    std::map<std::size_t, long> global_labels;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t i = 0; i <= pi; ++i) {
        const auto members = nbh.ring(s, i);
        if (members.empty()) continue;
        long ring_label = -1;
        if (pooling == Pooling::global_ring) {
          auto [it, inserted] = global_labels.emplace(i, next_label);
          if (inserted) ++next_label;
          ring_label = it->second;
        } else if (pooling == Pooling::per_location_ring) {
          ring_label = next_label++;
        }
        for (std::size_t other : members) {
          mask.ring_index[l - 1][s * n + other] = static_cast<int>(i);
          mask.group_label[l - 1][s * n + other] = pooling == Pooling::none ? next_label++ : ring_label;
        }
      }
    }
  }
  return mask;
}

SparsityMask full_mask(std::size_t locations, std::size_t lags) {
  SparsityMask mask;
  mask.locations = locations;
  mask.lags = lags;
  mask.pooling = Pooling::none;
  mask.ring_index.assign(lags, std::vector<int>(locations * locations, 0));
  mask.group_label.assign(lags, std::vector<long>(locations * locations, 0));
  long label = 0;
  for (auto& lag_labels : mask.group_label) {
    for (auto& v : lag_labels) v = label++;
  }
  return mask;
}

std::size_t lag_rule(double t, double c) {
  if (t <= 2.0) return 1;
  const double value = c * std::pow(t / std::log(t), 1.0 / 6.0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(value)));
}

std::vector<std::size_t> lag_grid(std::size_t t1, std::size_t t2, double c) {
  if (t1 < 1 || t1 > t2) throw ArgumentError("lag grid requires 1 <= T1 <= T2");
  if (!(c > 0.0)) throw ArgumentError("lag grid constant must be positive");
  const std::size_t lo = lag_rule(static_cast<double>(t1), c);
  const std::size_t hi = std::max(lo, lag_rule(static_cast<double>(t2), c));
  std::vector<std::size_t> grid;
  for (std::size_t l = lo; l <= hi; ++l) grid.push_back(l);
  return grid;
}

std::vector<std::size_t> LocationDesign::coefficients() const {
  std::vector<std::size_t> ids;
  ids.reserve(size());
  ids.push_back(intercept);
  ids.insert(ids.end(), exogenous.begin(), exogenous.end());
  for (const auto& term : terms) ids.push_back(term.coefficient);
  return ids;
}

DesignLayout make_layout(const SparsityMask& mask, std::size_t exogenous) {
  const std::size_t n = mask.locations;
  DesignLayout layout;
  layout.locations = n;
  layout.lags = mask.lags;
  layout.exogenous = exogenous;
  layout.rows.resize(n);
  std::size_t next = 0;
  std::map<long, std::size_t> shared;  // global pooling: label -> coefficient
  for (std::size_t s = 0; s < n; ++s) {
    LocationDesign& row = layout.rows[s];
    row.intercept = next++;
    for (std::size_t e = 0; e < exogenous; ++e) row.exogenous.push_back(next++);
    for (std::size_t l = 1; l <= mask.lags; ++l) {
      const auto& rings = mask.ring_index[l - 1];
      const auto& labels = mask.group_label[l - 1];
      if (mask.pooling == Pooling::none) {
        for (std::size_t other = 0; other < n; ++other) {
          if (rings[s * n + other] < 0) continue;
          row.terms.push_back({l, {other}, next++});
        }
        continue;
      }
      // One summed regressor per ring, rings in increasing order.
      std::map<int, std::vector<std::size_t>> by_ring;
      for (std::size_t other = 0; other < n; ++other) {
        if (rings[s * n + other] >= 0) by_ring[rings[s * n + other]].push_back(other);
      }
      for (auto& [ring, sources] : by_ring) {
        std::size_t coefficient = 0;
        if (mask.pooling == Pooling::global_ring) {
          const long label = labels[s * n + sources.front()];
          auto [it, inserted] = shared.emplace(label, next);
          if (inserted) ++next;
          coefficient = it->second;
        } else {
          coefficient = next++;
        }
        row.terms.push_back({l, std::move(sources), coefficient});
      }
    }
  }
  layout.coefficients = next;
  return layout;
}

void History::push(std::span<const double> y) {
  if (capacity_ == 0) return;
  buffer_.emplace_front(y.begin(), y.end());
  if (buffer_.size() > capacity_) buffer_.pop_back();
}

void design_row(const History& history, std::span<const double> z, const DesignLayout& layout,
                std::size_t s, std::span<double> out) {
  if (history.size() < layout.lags) throw StateError("design row needs more history than available");
  if (z.size() != layout.exogenous) throw ArgumentError("exogenous vector has the wrong length");
  const LocationDesign& row = layout.rows.at(s);
  if (out.size() != row.size()) throw ArgumentError("design row buffer has the wrong length");
  std::size_t k = 0;
  out[k++] = 1.0;
  for (double v : z) out[k++] = v;
  for (const auto& term : row.terms) {
    const auto y = history.lagged(term.lag);
    double value = 0.0;
    for (std::size_t source : term.sources) value += y[source];
    out[k++] = value;
  }
}

std::vector<double> design_row(const History& history, std::span<const double> z,
                               const DesignLayout& layout, std::size_t s) {
  std::vector<double> out(layout.rows.at(s).size());
  design_row(history, z, layout, s, out);
  return out;
}

}  // namespace bocpdms
