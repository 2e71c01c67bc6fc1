#pragma once

#include <string>

#include "l2g/benchmarks/metrics.hpp"
#include "l2g/benchmarks/streams.hpp"

namespace l2g {

enum class BaselineKind { sgd, ewc, l2, individual };

std::string to_string(BaselineKind kind);
BaselineKind baseline_from_string(const std::string& name);

struct BaselineConfig {
  std::size_t epochs = 5;
  std::size_t batch = 128;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lambda_ewc = 100.0;
  double lambda_l2 = 1e-2;
  std::size_t fisher_samples = 1024;
  std::size_t first_layer_width = 0;  ///< 0 keeps the topology's first layer width
  std::uint64_t seed = 0;

  void validate() const;
};

/// sgd, ewc and l2 train one parameter set with a single shared head across
/// the stream; individual trains a fresh model per task.
AccuracyMatrix run_baseline(BaselineKind kind, const TaskStream& stream, const Topology& topology,
                            const BaselineConfig& config);

}  // namespace l2g
