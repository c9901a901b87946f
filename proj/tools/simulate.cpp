// Writes a scenario's simulated series (and optionally its planted
// segmentation) as CSV files the CLI can read.

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "bocpdms/errors.hpp"
#include "bocpdms/evalgen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulate a changepoint scenario"};
  std::string scenario_path;
  std::string out_path;
  std::string truth_path;
  std::optional<std::uint64_t> seed;
  app.add_option("scenario", scenario_path, "scenario JSON file")->required();
  app.add_option("--out", out_path, "series CSV to write")->required();
  app.add_option("--truth", truth_path, "segmentation CSV to write");
  app.add_option("--seed", seed, "override the scenario seed");
  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = bocpdms::load_scenario(scenario_path);
    if (seed) spec.seed = *seed;
    const auto sim = bocpdms::simulate(spec);
    std::ofstream out(out_path);
    out << "t";
    for (Eigen::Index s = 0; s < sim.series.cols(); ++s) out << ",s" << s + 1;
    out << '\n';
    for (Eigen::Index t = 0; t < sim.series.rows(); ++t) {
      out << t + 1;
      for (Eigen::Index s = 0; s < sim.series.cols(); ++s) out << fmt::format(",{:.17g}", sim.series(t, s));
      out << '\n';
    }
    if (!truth_path.empty()) {
      std::ofstream truth(truth_path);
      truth << "cp_time,segment,label\n";
      for (const auto& seg : sim.truth.entries) {
        truth << seg.cp_time << ',' << seg.model_id << ',' << spec.segments[seg.model_id].label << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
