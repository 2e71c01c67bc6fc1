#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2g/benchmarks/baselines.hpp"
#include "l2g/benchmarks/streams.hpp"
#include "l2g/retrain/retrain.hpp"
#include "l2g/search/search.hpp"

namespace l2g {

/// Invalid configuration; `path` names the offending field, e.g. "search.beta".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class StreamKind { permuted, split, synthetic };

std::string to_string(StreamKind kind);

struct StreamConfig {
  StreamKind kind = StreamKind::synthetic;
  std::string data_dir = "data/mnist";
  PermutedOptions permuted;
  SplitOptions split;
  SyntheticOptions synthetic;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  StreamConfig stream;
  Topology topology;
  SearchConfig search;
  RetrainConfig retrain;
  /// Retrain strategies to run learn-to-grow with; each is its own method.
  std::vector<StrategyKind> strategies{StrategyKind::fix_reuse};
  std::vector<BaselineKind> baselines;
  BaselineConfig baseline;
  std::vector<double> betas{0.01, 0.1, 1.0};
  std::filesystem::path output_dir = "runs/default";

  /// Pushes `seed` into every component.
  void apply_seed(std::uint64_t s);
};

/// Strict parse: unknown keys and wrong types throw ConfigError with the field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved form; config_from_json(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const ExperimentConfig& c);

/// Builds the task stream, loading MNIST when needed (L2G_DATA_DIR overrides the directory).
TaskStream build_stream(const ExperimentConfig& c);

}  // namespace l2g
