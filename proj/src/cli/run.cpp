#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bocpdms/cli.hpp"
#include "bocpdms/errors.hpp"
#include "bocpdms/logmath.hpp"

namespace bocpdms {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace

namespace {

struct Preprocessing {
  std::size_t length = 0;
  std::vector<std::string> columns;
  std::optional<SeasonalMeans> seasonal;
  Standardization scaling;

  void apply(std::vector<double>& row, std::size_t t) const {
    for (std::size_t s = 0; s < row.size(); ++s) {
      const auto i = static_cast<Eigen::Index>(s);
      if (seasonal) row[s] -= seasonal->means(static_cast<Eigen::Index>((t - 1) % seasonal->period), i);
      row[s] = (row[s] - scaling.mean(i)) / scaling.sd(i);
    }
  }
};

std::ifstream open_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return in;
}

// Seasonal means and scaling from up to two streaming passes over the file.
Preprocessing scan(const RunConfig& config) {
  Preprocessing pre;
  const std::size_t period = config.deseasonalize_period;
  std::vector<double> row;
  std::string label;
  {
    auto in = open_data(config.data_path);
    CsvReader reader(in, config.data_path);
    pre.columns = reader.columns();
    const auto S = static_cast<Eigen::Index>(pre.columns.size());
    Eigen::MatrixXd sums;
    std::vector<double> counts;
    if (period > 0) {
      sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(period), S);
      counts.assign(period, 0.0);
    }
    while (reader.next(row, label)) {
      if (period == 0) continue;
      const std::size_t phase = (reader.rows() - 1) % period;
      for (Eigen::Index s = 0; s < S; ++s) sums(static_cast<Eigen::Index>(phase), s) += row[static_cast<std::size_t>(s)];
      counts[phase] += 1.0;
    }
    pre.length = reader.rows();
    if (pre.length == 0) throw ParseError(config.data_path + ": no data rows");
    if (period > 0) {
      if (pre.length < period) throw ConfigError("series is shorter than the seasonal period");
      SeasonalMeans means;
      means.period = period;
      means.means = sums;
      for (std::size_t p = 0; p < period; ++p) means.means.row(static_cast<Eigen::Index>(p)) /= counts[p];
      pre.seasonal = std::move(means);
    }
  }
  const auto S = static_cast<Eigen::Index>(pre.columns.size());
  pre.scaling = {Eigen::VectorXd::Zero(S), Eigen::VectorXd::Ones(S)};
  if (!config.standardize) return pre;
  if (pre.length < 2) throw ArgumentError("standardizing needs at least two observations");
  auto in = open_data(config.data_path);
  CsvReader reader(in, config.data_path);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(S);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(S);
  while (reader.next(row, label)) {
    pre.apply(row, reader.rows());
    const double n = static_cast<double>(reader.rows());
    for (Eigen::Index s = 0; s < S; ++s) {
      const double d = row[static_cast<std::size_t>(s)] - mean(s);
      mean(s) += d / n;
      m2(s) += d * (row[static_cast<std::size_t>(s)] - mean(s));
    }
  }
  pre.scaling.mean = mean;
  pre.scaling.sd = (m2 / static_cast<double>(pre.length - 1)).cwiseSqrt();
  for (Eigen::Index s = 0; s < S; ++s) {
    if (!(pre.scaling.sd(s) > 0.0)) {
      throw ArgumentError("cannot standardize a constant series (column " + std::to_string(s + 1) + ")");
    }
  }
  return pre;
}

// Row labels for the requested 1-based times.
std::map<std::size_t, std::string> labels_at(const std::string& path, const std::set<std::size_t>& times) {
  std::map<std::size_t, std::string> out;
  if (times.empty()) return out;
  auto in = open_data(path);
  CsvReader reader(in, path);
  std::vector<double> row;
  std::string label;
  while (reader.next(row, label) && reader.rows() <= *times.rbegin()) {
    if (times.count(reader.rows())) out[reader.rows()] = label;
  }
  return out;
}

}  // namespace

RunResult run(const RunConfig& config) {
  validate(config);
  const Preprocessing pre = scan(config);
  const std::size_t T = pre.length;
  const std::size_t S = pre.columns.size();
  const ModelUniverse universe = build_universe(config, S, T);
  const std::size_t M = universe.members.size();

  EngineConfig ec;
  ec.hazard.lambda = config.lambda;
  ec.mode = config.mode;
  ec.r_max = config.r_max;
  ec.horizon = config.horizon;
  ec.hyperopt = config.hyperopt;
  ec.threads = config.threads;
  Engine engine(universe, ec, S);

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  auto steps_out = open_output(out_dir / "steps.csv");
  auto rld_out = open_output(out_dir / "rld.csv");
  auto sgv_out = open_output(out_dir / "sgv.csv");
  const std::size_t width = config.rld_columns > 0 ? config.rld_columns : std::min<std::size_t>(T, 2000);

  fmt::print(steps_out, "t,index,log_evidence,rld_argmax,cp_flag,map_changepoints,one_step_log_density");
  for (const auto& m : universe.members) fmt::print(steps_out, ",p_{}", m.name);
  for (const auto& m : universe.members) fmt::print(steps_out, ",a_{},b_{}", m.name, m.name);
  for (std::size_t h = 1; h <= config.horizon; ++h) {
    for (const auto& col : pre.columns) fmt::print(steps_out, ",yhat_h{}_{}", h, col);
  }
  steps_out << '\n';
  rld_out << "t";
  for (std::size_t r = 0; r < width; ++r) fmt::print(rld_out, ",r{}", r);
  rld_out << '\n';
  sgv_out << "t,sgv,reduced_sgv,log_sgv,shortened\n";

  RunResult result;
  MetricAccumulator scores;
  SgvWindow sgv(config.sgv_window);
  std::string failure;
  std::size_t failure_t = 0;
  std::vector<double> row;
  std::string label;
  std::vector<double> rld(width);
  Eigen::MatrixXd mean(1, static_cast<Eigen::Index>(S));

  auto in = open_data(config.data_path);
  CsvReader reader(in, config.data_path);
  while (reader.next(row, label)) {
    const std::size_t t = reader.rows();
    pre.apply(row, t);
    std::optional<Eigen::VectorXd> previous_mean;
    if (t > 1 && !engine.last().forecasts.empty()) previous_mean = engine.last().forecasts.front().mean;
    const StepOutput* step = nullptr;
    try {
      step = &engine.step(row);
    } catch (const NumericalCollapse& e) {
      result.collapsed = true;
      failure = e.what();
      failure_t = e.t();
      break;
    }
    result.steps = t;
    if (step->has_one_step && previous_mean) {
      scores.add(*previous_mean, Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(S)),
                 step->one_step_log_density);
    }
    std::size_t argmax = 0;
    double best = -1.0;
    for (const auto& cell : step->global_rld) {
      if (cell.probability > best) {
        best = cell.probability;
        argmax = cell.run_length;
      }
    }
    const bool any_active = !step->global_rld.empty();
    fmt::print(steps_out, "{},{},{},{},{},{},{}", t, label, num(step->log_evidence),
               any_active ? std::to_string(argmax) : std::string{}, step->new_changepoint ? 1 : 0,
               step->map.changepoints(), step->has_one_step ? num(step->one_step_log_density) : std::string{});
    for (double p : step->model_posterior) fmt::print(steps_out, ",{}", num(p));
    for (const auto& h : step->hyper) fmt::print(steps_out, ",{},{}", num(h.a), num(h.b));
    for (std::size_t h = 0; h < config.horizon; ++h) {
      if (h >= step->forecasts.size()) {
        for (std::size_t s = 0; s < S; ++s) steps_out << ',';
        continue;
      }
      // Back to the units of the input file.
      mean.row(0) = (step->forecasts[h].mean.array() * pre.scaling.sd.array() + pre.scaling.mean.array()).transpose();
      if (pre.seasonal) reseasonalize(mean, *pre.seasonal, t + h + 1);
      for (std::size_t s = 0; s < S; ++s) fmt::print(steps_out, ",{}", num(mean(0, static_cast<Eigen::Index>(s))));
    }
    steps_out << '\n';

    std::fill(rld.begin(), rld.end(), kNegInf);
    for (const auto& cell : step->global_rld) {
      if (cell.run_length < width) rld[cell.run_length] = std::log(cell.probability);
    }
    fmt::print(rld_out, "{}", t);
    for (double v : rld) fmt::print(rld_out, ",{}", num(v));
    rld_out << '\n';

    if (any_active) {
      const SgvPoint p = sgv.push(step->model_posterior);
      fmt::print(sgv_out, "{},{},{},{},{}\n", t, num(p.sgv), num(p.reduced_sgv), num(p.log_sgv), p.shortened ? 1 : 0);
    }
  }

  if (result.steps > 0) {
    result.map = engine.last().map;
    result.log_evidence = engine.last().log_evidence;
  }
  std::set<std::size_t> cp_times;
  for (const auto& seg : result.map.entries) cp_times.insert(seg.cp_time);
  const auto labels = labels_at(config.data_path, cp_times);
  auto seg_out = open_output(out_dir / "segmentation.csv");
  seg_out << "cp_time,index,model\n";
  for (const auto& seg : result.map.entries) {
    fmt::print(seg_out, "{},{},{}\n", seg.cp_time, labels.at(seg.cp_time), universe.members[seg.model_id].name);
  }

  json metrics_json = {{"count", 0}, {"log_evidence", result.log_evidence},
                       {"map_changepoints", result.map.changepoints()}, {"units", config.standardize ? "standardized" : "raw"}};
  if (scores.count() > 0) {
    result.metrics = scores.summary();
    metrics_json["count"] = result.metrics.count;
    metrics_json["mse"] = result.metrics.mse;
    metrics_json["mse_ci95"] = result.metrics.mse_half_width;
    metrics_json["nll"] = result.metrics.nll;
    metrics_json["nll_ci95"] = result.metrics.nll_half_width;
  }
  write_json(out_dir / "metrics.json", metrics_json);

  json status = {{"status", result.collapsed ? "numerical_collapse" : "ok"},
                 {"steps", result.steps},
                 {"models", M},
                 {"seed", config.seed}};
  if (result.collapsed) {
    status["failed_at"] = failure_t;
    status["message"] = failure;
  }
  write_json(out_dir / "status.json", status);
  return result;
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Bayesian online changepoint detection with model selection"};
  std::string data;
  std::string config_path;
  std::string out;
  std::string mode;
  std::optional<std::size_t> rmax;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  app.add_option("--data", data, "CSV file: header of location ids, one row per time step");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out, "output directory");
  app.add_option("--mode", mode, "recursion mode")->check(CLI::IsMember({"paper", "strict"}));
  app.add_option("--rmax", rmax, "run lengths retained per model (0 disables pruning)");
  app.add_option("--lambda", lambda, "expected run length between changepoints");
  app.add_option("--seed", seed, "seed recorded with the outputs");
  app.add_option("--threads", threads, "model-parallel worker threads");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!data.empty()) config.data_path = data;
    if (!out.empty()) config.output_dir = out;
    if (!mode.empty()) config.mode = parse_mode(mode);
    if (rmax) config.r_max = *rmax;
    if (lambda) config.lambda = *lambda;
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    const RunResult result = run(config);
    if (result.collapsed) {
      std::cerr << "numerical collapse: every hypothesis lost its mass; partial outputs written to "
                << config.output_dir << '\n';
      return kExitCollapse;
    }
    std::cout << fmt::format("processed {} steps, {} MAP changepoint(s)", result.steps, result.map.changepoints());
    if (result.metrics.count > 0) {
      std::cout << fmt::format(", one-step MSE {:.4f} +/- {:.4f}, NLL {:.4f} +/- {:.4f}", result.metrics.mse,
                               result.metrics.mse_half_width, result.metrics.nll, result.metrics.nll_half_width);
    }
    std::cout << '\n';
    return kExitOk;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitParse;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace bocpdms
