#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "l2g/benchmarks/oracle.hpp"
#include "l2g/experiments/config.hpp"
#include "l2g/experiments/gradcheck_suite.hpp"
#include "l2g/experiments/results.hpp"

namespace l2g {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Learn-to-grow for every configured strategy, then every baseline. When
/// `out_dir` is set, a checkpoint (manifest.json + weights.bin) and a JSON-lines
/// trace are written per learn-to-grow method.
RunResults run_experiment(const ExperimentConfig& config, const TaskStream& stream,
                          const std::filesystem::path* out_dir = nullptr, std::ostream* log = nullptr);

struct BetaSweepRow {
  double beta = 0.0;
  std::size_t added_params = 0;  ///< parameters grown after the first task
  std::size_t total_params = 0;
  double final_avg = 0.0;
  double mean_penalty = 0.0;     ///< last-epoch structure penalty averaged over searched tasks
  std::vector<TaskStructure> structures;
};

/// Learn-to-grow with the first configured strategy once per beta, same seed.
std::vector<BetaSweepRow> beta_sweep(const ExperimentConfig& config, const TaskStream& stream,
                                     const std::vector<double>& betas, std::ostream* log = nullptr);

struct EnumerateReport {
  std::vector<OracleEntry> ranking;
  TaskStructure searched;
  int rank = -1;
  double gap = 0.0;  ///< searched minus best validation accuracy
};

/// Trains task 0, ranks every structure for task 1 and locates the searched one.
EnumerateReport enumerate_against_search(const ExperimentConfig& config, const TaskStream& stream);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
};

int cmd_run(const std::filesystem::path& config_path, const CliOverrides& overrides, std::ostream& out,
            std::ostream& err);
int cmd_beta_sweep(const std::filesystem::path& config_path, const std::vector<double>& betas,
                   const CliOverrides& overrides, std::ostream& out, std::ostream& err);
int cmd_report(const std::filesystem::path& results_path, std::ostream& out, std::ostream& err);
int cmd_gradcheck(std::ostream& out, std::ostream& err, const std::vector<GradCheckCase>& cases = default_gradcheck_cases());
int cmd_enumerate(const std::filesystem::path& config_path, const CliOverrides& overrides, std::ostream& out,
                  std::ostream& err);

}  // namespace l2g
