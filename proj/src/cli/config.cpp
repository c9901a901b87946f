#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bocpdms/cli.hpp"
#include "bocpdms/errors.hpp"
#include "bocpdms/spatial.hpp"

namespace bocpdms {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for '" + key + "' in " + where);
  }
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

const std::set<std::string> kModelKeys{"name", "lag",   "structure", "pooling", "radii", "decay",
                                       "a",    "b",     "g",         "omega"};

ModelSpec model_from_json(const json& j, const json& defaults, std::size_t lag, const RunConfig& config,
                          std::size_t locations, const std::string& where) {
  check_keys(j, kModelKeys, where);
  json merged = defaults;
  for (const auto& item : j.items()) merged[item.key()] = item.value();
  ModelSpec spec;
  spec.name = merged.value("name", std::string{});
  spec.lag = lag;
  try {
    spec.structure = parse_structure(merged.value("structure", std::string("full")));
    spec.pooling = parse_pooling(merged.value("pooling", std::string("none")));
  } catch (const ArgumentError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  spec.prior.a = merged.contains("a") ? get<double>(merged, "a", where) : 1.0;
  spec.prior.b = merged.contains("b") ? get<double>(merged, "b", where) : 1.0;
  spec.prior.g = merged.contains("g") ? get<double>(merged, "g", where) : 1.0;
  if (merged.contains("omega")) spec.prior.omega = get<std::vector<double>>(merged, "omega", where);
  try {
    spec.prior.validate(locations);
  } catch (const ArgumentError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (spec.structure == Structure::neighbourhood) {
    if (!merged.contains("radii")) throw ConfigError(where + ": neighbourhood models need \"radii\"");
    const auto radii = get<std::vector<double>>(merged, "radii", where);
    try {
      if (config.grid.size() == 2) {
        spec.neighbourhoods = grid_neighbourhoods(config.grid[0], config.grid[1], radii);
      } else if (!config.coordinates_path.empty()) {
        const Series coords = ingest(config.coordinates_path);
        std::vector<std::vector<double>> points;
        for (Eigen::Index i = 0; i < coords.values.rows(); ++i) {
          std::vector<double>& p = points.emplace_back();
          for (Eigen::Index d = 0; d < coords.values.cols(); ++d) p.push_back(coords.values(i, d));
        }
        spec.neighbourhoods = build_from_coords(points, radii);
      } else {
        throw ConfigError(where + ": neighbourhood models need \"grid\" or \"coordinates\"");
      }
    } catch (const ArgumentError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    std::vector<std::size_t> decay =
        merged.contains("decay") ? get<std::vector<std::size_t>>(merged, "decay", where)
                                 : std::vector<std::size_t>{spec.neighbourhoods.num_rings()};
    if (decay.empty()) throw ConfigError(where + ": \"decay\" must not be empty");
    // A decay map shorter than the lag repeats its last value.
    while (decay.size() < lag) decay.push_back(decay.back());
    spec.decay.max_ring = decay;
  }
  if (spec.name.empty()) spec.name = to_string(spec.structure) + "_L" + std::to_string(lag);
  return spec;
}

}  // namespace

RunConfig parse_config(const json& j, const std::string& base_dir) {
  check_keys(j, {"data", "coordinates", "output", "grid", "hazard", "lambda", "r_max", "mode", "hyperopt", "horizon",
                 "seed", "threads", "preprocess", "sgv_window", "rld_columns", "universe"},
             "config");
  RunConfig c;
  c.base_dir = base_dir;
  if (j.contains("data")) c.data_path = resolve(get<std::string>(j, "data", "config"), base_dir);
  if (j.contains("coordinates")) c.coordinates_path = resolve(get<std::string>(j, "coordinates", "config"), base_dir);
  if (j.contains("output")) c.output_dir = resolve(get<std::string>(j, "output", "config"), base_dir);
  if (j.contains("grid")) c.grid = get<std::vector<std::size_t>>(j, "grid", "config");
  if (j.contains("lambda")) c.lambda = get<double>(j, "lambda", "config");
  if (j.contains("hazard")) {
    check_keys(j.at("hazard"), {"lambda"}, "hazard");
    c.lambda = get<double>(j.at("hazard"), "lambda", "hazard");
  }
  if (j.contains("r_max")) c.r_max = get<std::size_t>(j, "r_max", "config");
  if (j.contains("mode")) {
    try {
      c.mode = parse_mode(get<std::string>(j, "mode", "config"));
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("hyperopt")) {
    const auto& h = j.at("hyperopt");
    check_keys(h, {"enabled", "alpha0"}, "hyperopt");
    if (h.contains("enabled")) c.hyperopt.enabled = get<bool>(h, "enabled", "hyperopt");
    if (h.contains("alpha0")) c.hyperopt.alpha0 = get<double>(h, "alpha0", "hyperopt");
  }
  if (j.contains("horizon")) c.horizon = get<std::size_t>(j, "horizon", "config");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
  if (j.contains("threads")) c.threads = get<std::size_t>(j, "threads", "config");
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    check_keys(p, {"standardize", "deseasonalize_period"}, "preprocess");
    if (p.contains("standardize")) c.standardize = get<bool>(p, "standardize", "preprocess");
    if (p.contains("deseasonalize_period")) c.deseasonalize_period = get<std::size_t>(p, "deseasonalize_period", "preprocess");
  }
  if (j.contains("sgv_window")) c.sgv_window = get<std::size_t>(j, "sgv_window", "config");
  if (j.contains("rld_columns")) c.rld_columns = get<std::size_t>(j, "rld_columns", "config");
  if (j.contains("universe")) {
    c.universe = j.at("universe");
    check_keys(c.universe, {"prior_q", "defaults", "models", "lag_grid"}, "universe");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path().string());
}

void validate(const RunConfig& c) {
  if (c.data_path.empty()) throw ConfigError("no data file given");
  if (!fs::exists(c.data_path)) throw ConfigError("data file does not exist: " + c.data_path);
  if (!c.coordinates_path.empty() && !fs::exists(c.coordinates_path)) {
    throw ConfigError("coordinates file does not exist: " + c.coordinates_path);
  }
  if (!(c.lambda >= 1.0) || !std::isfinite(c.lambda)) throw ConfigError("hazard lambda must be finite and >= 1");
  if (!(c.hyperopt.alpha0 >= 0.0) || !std::isfinite(c.hyperopt.alpha0)) throw ConfigError("hyperopt.alpha0 must be >= 0");
  if (c.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (c.sgv_window < 2) throw ConfigError("sgv_window must be at least 2");
  if (!c.grid.empty() && (c.grid.size() != 2 || c.grid[0] == 0 || c.grid[1] == 0)) {
    throw ConfigError("grid must be [rows, cols] with positive entries");
  }
  if (c.output_dir.empty()) throw ConfigError("no output directory given");
  const json& u = c.universe;
  const bool has_models = u.is_object() && u.contains("models") && u.at("models").is_array() && !u.at("models").empty();
  const bool has_grid = u.is_object() && u.contains("lag_grid");
  if (!u.is_null() && !has_models && !has_grid) throw ConfigError("the model universe is empty");
}

ModelUniverse build_universe(const RunConfig& c, std::size_t locations, std::size_t length) {
  ModelUniverse universe;
  json u = c.universe;
  if (u.is_null()) {
    // No universe configured: autoregressions of lag 1..3 on all locations.
    u = json{{"models", json::array({json{{"lag", 1}}, json{{"lag", 2}}, json{{"lag", 3}}})}};
  }
  const json defaults = u.value("defaults", json::object());
  check_keys(defaults, kModelKeys, "universe.defaults");
  if (u.contains("models")) {
    std::size_t i = 0;
    for (const auto& jm : u.at("models")) {
      const std::string where = "universe.models[" + std::to_string(i++) + "]";
      json merged = defaults;
      for (const auto& item : jm.items()) merged[item.key()] = item.value();
      if (!merged.contains("lag")) throw ConfigError(where + ": missing \"lag\"");
      universe.members.push_back(model_from_json(jm, defaults, get<std::size_t>(merged, "lag", where), c, locations, where));
    }
  }
  if (u.contains("lag_grid")) {
    const auto& g = u.at("lag_grid");
    check_keys(g, {"T1", "T2", "C", "models"}, "universe.lag_grid");
    const std::size_t t1 = g.contains("T1") ? get<std::size_t>(g, "T1", "universe.lag_grid") : 1;
    const std::size_t t2 = g.contains("T2") ? get<std::size_t>(g, "T2", "universe.lag_grid") : length;
    const double cc = g.contains("C") ? get<double>(g, "C", "universe.lag_grid") : 1.0;
    std::vector<std::size_t> lags;
    try {
      lags = lag_grid(t1, t2, cc);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("universe.lag_grid: ") + e.what());
    }
    const json templates = g.value("models", json::array({json::object()}));
    std::size_t i = 0;
    for (const auto& jt : templates) {
      const std::string where = "universe.lag_grid.models[" + std::to_string(i++) + "]";
      if (jt.contains("lag")) throw ConfigError(where + ": lag grid templates must not set \"lag\"");
      for (std::size_t lag : lags) {
        ModelSpec spec = model_from_json(jt, defaults, lag, c, locations, where);
        if (jt.contains("name") || defaults.contains("name")) spec.name += "_L" + std::to_string(lag);
        universe.members.push_back(std::move(spec));
      }
    }
  }
  if (universe.members.empty()) throw ConfigError("the model universe is empty");
  if (u.contains("prior_q")) universe.prior_q = get<std::vector<double>>(u, "prior_q", "universe");
  try {
    universe.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("universe: ") + e.what());
  }
  return universe;
}

}  // namespace bocpdms
