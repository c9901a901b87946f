#pragma once

// Command-line front end: CSV ingestion, preprocessing, run configuration and
// the output writers.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bocpdms/engine.hpp"
#include "bocpdms/evalgen.hpp"

namespace bocpdms {

struct Series {
  Eigen::MatrixXd values;            // T x S
  std::vector<std::string> columns;  // location ids from the header
  std::string index_name;            // empty when the file has no index column
  std::vector<std::string> index;    // per-row index labels (row numbers when absent)
};

// The header row names the locations. A first column called year, time, t,
// date or index (any case) is kept as row labels instead of data.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::string& index_name() const { return index_name_; }
  std::size_t rows() const { return rows_; }

  // Reads the next data row into `values` (one per column); false at the end.
  bool next(std::vector<double>& values, std::string& label);

 private:
  std::istream& in_;
  std::string source_;
  std::vector<std::string> columns_;
  std::string index_name_;
  std::size_t width_ = 0;  // cells per line, index included
  std::size_t line_ = 0;
  std::size_t rows_ = 0;
};

Series parse_csv(std::istream& in, const std::string& source = "<input>");
Series ingest(const std::string& path);

struct SeasonalMeans {
  std::size_t period = 1;
  Eigen::MatrixXd means;  // period x S, row p holds phase p = (t - 1) mod period
};

SeasonalMeans deseasonalize(Eigen::MatrixXd& series, std::size_t period);
// Adds the means back; row i of `values` is time first_t + i (1-based).
void reseasonalize(Eigen::MatrixXd& values, const SeasonalMeans& means, std::size_t first_t = 1);

struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};
Standardization standardize(Eigen::MatrixXd& series);

struct RunConfig {
  std::string data_path;
  std::string coordinates_path;  // optional CSV of location coordinates
  std::string output_dir = "bocpdms-out";
  std::vector<std::size_t> grid;  // {rows, cols} when locations form a lattice
  double lambda = 100.0;
  std::size_t r_max = 100;
  RecursionMode mode = RecursionMode::paper;
  HyperoptConfig hyperopt{true, 0.1};
  std::size_t horizon = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool standardize = true;
  std::size_t deseasonalize_period = 0;  // 0 disables
  std::size_t sgv_window = 8;
  std::size_t rld_columns = 0;           // 0 means min(T, 2000)
  nlohmann::json universe;               // resolved once the data shape is known
  std::string base_dir;                  // relative paths in the config resolve here
};

// Parses a JSON config; unknown keys are rejected. Paths are resolved
// relative to the config file's directory.
RunConfig parse_config(const nlohmann::json& j, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);
void validate(const RunConfig& config);

// Builds the model universe for S locations and T observations.
ModelUniverse build_universe(const RunConfig& config, std::size_t locations, std::size_t length);

struct RunResult {
  std::size_t steps = 0;
  Segmentation map;
  MetricSummary metrics;
  double log_evidence = 0.0;
  bool collapsed = false;
};

// Runs the configured analysis and writes steps.csv, rld.csv,
// segmentation.csv, metrics.json, sgv.csv and status.json to output_dir.
RunResult run(const RunConfig& config);

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitParse = 2,
  kExitConfig = 3,
  kExitCollapse = 4,
};

// Full command-line entry point; returns the process exit code.
int cli_main(int argc, char** argv);

}  // namespace bocpdms
