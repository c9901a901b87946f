#include "bocpdms/model.hpp"

#include "bocpdms/errors.hpp"

namespace bocpdms {

Structure parse_structure(const std::string& name) {
  if (name == "full") return Structure::full;
  if (name == "independent") return Structure::independent;
  if (name == "neighbourhood" || name == "neighborhood") return Structure::neighbourhood;
  throw ArgumentError("unknown model structure: " + name);
}

std::string to_string(Structure structure) {
  switch (structure) {
    case Structure::full: return "full";
    case Structure::independent: return "independent";
    case Structure::neighbourhood: return "neighbourhood";
  }
  return "full";
}

Model::Model(ModelSpec spec, std::size_t locations) : spec_(std::move(spec)) {
  if (locations == 0) throw ArgumentError("a model needs at least one location");
  spec_.prior.validate(locations);
  switch (spec_.structure) {
    case Structure::full:
      mask_ = full_mask(locations, spec_.lag);
      break;
    case Structure::independent: {
      NeighbourhoodSystem own;
      own.rings.assign(locations, {});
      mask_ = sparsity_pattern(spec_.lag, own, DecaySpec{std::vector<std::size_t>(spec_.lag, 0)}, spec_.pooling);
      break;
    }
    case Structure::neighbourhood:
      if (spec_.neighbourhoods.num_locations() != locations) {
        throw ArgumentError("neighbourhood system of model '" + spec_.name + "' covers " +
                            std::to_string(spec_.neighbourhoods.num_locations()) + " locations, data has " +
                            std::to_string(locations));
      }
      validate(spec_.neighbourhoods);
      mask_ = sparsity_pattern(spec_.lag, spec_.neighbourhoods, spec_.decay, spec_.pooling);
      break;
  }
  layout_ = make_layout(mask_, spec_.exogenous);
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(locations);
  for (const auto& row : layout_.rows) rows.push_back(row.coefficients());
  structure_ = BlockStructure::from_rows(rows, layout_.coefficients);
}

BlockDesign Model::design(const History& history, std::span<const double> z) const {
  std::vector<double> flat;
  for (std::size_t s = 0; s < layout_.locations; ++s) {
    const std::size_t begin = flat.size();
    flat.resize(begin + layout_.rows[s].size());
    design_row(history, z, layout_, s, std::span<double>(flat).subspan(begin));
  }
  return BlockDesign::scatter(structure_, flat);
}

}  // namespace bocpdms
