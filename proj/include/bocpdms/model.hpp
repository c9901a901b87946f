#pragma once

// One member of the model universe: a BVAR with a lag length, a coefficient
// sparsity structure and its priors, compiled into a design layout.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bocpdms/bvar.hpp"
#include "bocpdms/spatial.hpp"

namespace bocpdms {

enum class Structure {
  full,           // every location regresses on every location at every lag
  independent,    // each location on its own lags only
  neighbourhood,  // masked by neighbourhood rings and the decay map
};

Structure parse_structure(const std::string& name);
std::string to_string(Structure structure);

struct ModelSpec {
  std::string name;
  std::size_t lag = 1;
  Structure structure = Structure::full;
  NeighbourhoodSystem neighbourhoods;  // used by Structure::neighbourhood
  DecaySpec decay;
  Pooling pooling = Pooling::none;
  std::size_t exogenous = 0;
  BvarPrior prior;
};

class Model {
 public:
  Model(ModelSpec spec, std::size_t locations);

  const ModelSpec& spec() const { return spec_; }
  std::size_t lag() const { return spec_.lag; }
  std::size_t locations() const { return layout_.locations; }
  const SparsityMask& mask() const { return mask_; }
  const DesignLayout& layout() const { return layout_; }
  const BlockStructure& structure() const { return structure_; }

  // Regressors for time t given y_{t-1}, ..., y_{t-lag} in `history`.
  BlockDesign design(const History& history, std::span<const double> z) const;

 private:
  ModelSpec spec_;
  SparsityMask mask_;
  DesignLayout layout_;
  BlockStructure structure_;
};

}  // namespace bocpdms
