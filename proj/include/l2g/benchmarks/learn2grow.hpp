#pragma once

#include <ostream>
#include <stdexcept>
#include <vector>

#include "l2g/benchmarks/metrics.hpp"
#include "l2g/benchmarks/streams.hpp"
#include "l2g/retrain/retrain.hpp"
#include "l2g/search/search.hpp"

namespace l2g {

/// A stage failed; carries the stage name and task index.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int task, const std::string& what)
      : std::runtime_error(stage + " failed on task " + std::to_string(task) + ": " + what),
        stage_(std::move(stage)),
        task_(task) {}
  const std::string& stage() const { return stage_; }
  int task() const { return task_; }

 private:
  std::string stage_;
  int task_;
};

struct Learn2GrowOptions {
  std::size_t probe_size = 64;       ///< test rows per task whose logits are recorded
  std::ostream* trace = nullptr;     ///< JSON lines from search and retrain, tagged by task
};

struct Learn2GrowRun {
  SuperNet net;
  AccuracyMatrix accuracy;
  std::vector<TaskStructure> structures;
  std::vector<GrowthReport> growth;
  std::vector<std::vector<SearchEpoch>> search_traces;  ///< empty for task 0
  /// probe_logits[t][t'] are task t' probe logits after committing task t.
  std::vector<std::vector<Tensor>> probe_logits;
};

/// Task 0 is trained as all-New. Each later task is searched, derived,
/// retrained, committed and then every seen task is evaluated on its test set.
Learn2GrowRun run_learn2grow(const TaskStream& stream, const Topology& topology, const SearchConfig& search_config,
                             const RetrainConfig& retrain_config, const Learn2GrowOptions& options = {});

/// Test accuracy of committed task `task`.
double task_accuracy(const SuperNet& net, int task, const ExampleSet& test);

}  // namespace l2g
