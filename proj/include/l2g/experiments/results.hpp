#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2g/benchmarks/metrics.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g {

/// results.json is missing or does not follow the expected layout.
class ResultsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MethodResult {
  std::string name;    ///< e.g. "learn2grow_fix", "sgd"
  std::string family;  ///< "learn2grow" or "baseline"
  AccuracyMatrix accuracy;
  Metrics metrics;
  std::vector<TaskStructure> structures;  ///< learn2grow only
  std::vector<GrowthReport> growth;       ///< learn2grow only
  double seconds = 0.0;
};

struct RunResults {
  nlohmann::json config;
  std::vector<MethodResult> methods;
  double seconds = 0.0;

  const MethodResult& method(const std::string& name) const;
};

/// Wall-clock figures live only under the top-level "wall_clock" key.
nlohmann::json results_to_json(const RunResults& r);
/// Reads matrices and structures back; metrics are recomputed and must match the stored ones.
RunResults results_from_json(const nlohmann::json& j);
RunResults load_results(const std::filesystem::path& path);

/// Canonical text of results.json with the wall-clock block removed.
std::string results_without_wall_clock(const std::string& results_json);

nlohmann::json structures_to_json(const RunResults& r);
/// Header "method,after_task,avg_acc,params", one row per method and task.
std::string metrics_csv(const RunResults& r);
/// Average seen-task accuracy against tasks learned, one polyline per method.
std::string accuracy_svg(const RunResults& r);

/// Writes results.json, metrics.csv, structures.json and report.svg into `dir`.
void write_results(const RunResults& r, const std::filesystem::path& dir);

}  // namespace l2g
