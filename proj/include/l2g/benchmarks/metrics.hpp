#pragma once

#include <vector>

namespace l2g {

/// A[t][t'] is the accuracy on task t' after training through task t (t' <= t).
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> params_after;  ///< model size after each task

  std::size_t num_tasks() const { return rows.size(); }
  double at(std::size_t t, std::size_t seen) const;
  /// Throws ContractError unless row t has t+1 entries in [0,1].
  void validate() const;
};

struct Metrics {
  std::vector<double> avg_after_task;
  double final_avg = 0.0;
  /// max over s >= t of A[s][t] minus A[N-1][t]; zero for the last task.
  std::vector<double> forgetting;
  /// Mean over t < N-1 of A[N-1][t] - A[t][t]; zero for a single task.
  double backward_transfer = 0.0;
};

Metrics compute_metrics(const AccuracyMatrix& a);

}  // namespace l2g
