#include "l2g/benchmarks/metrics.hpp"

#include <algorithm>
#include <string>

#include "l2g/tensor/tensor.hpp"

namespace l2g {

double AccuracyMatrix::at(std::size_t t, std::size_t seen) const {
  if (t >= rows.size() || seen >= rows[t].size()) {
    throw ContractError("accuracy matrix has no entry [" + std::to_string(t) + "][" + std::to_string(seen) + "]");
  }
  return rows[t][seen];
}

void AccuracyMatrix::validate() const {
  if (rows.empty()) throw ContractError("accuracy matrix is empty");
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != t + 1) {
      throw ContractError("accuracy matrix row " + std::to_string(t) + " has " + std::to_string(rows[t].size()) +
                          " entries, expected " + std::to_string(t + 1));
    }
    for (double v : rows[t]) {
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("accuracy matrix entry outside [0,1] in row " + std::to_string(t));
    }
  }
}

Metrics compute_metrics(const AccuracyMatrix& a) {
  a.validate();
  const std::size_t n = a.num_tasks();
  Metrics m;
  for (const auto& row : a.rows) {
    double total = 0.0;
    for (double v : row) total += v;
    m.avg_after_task.push_back(total / static_cast<double>(row.size()));
  }
  m.final_avg = m.avg_after_task.back();
  m.forgetting.assign(n, 0.0);
  double bwt = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    double best = 0.0;
    for (std::size_t s = t; s < n; ++s) best = std::max(best, a.rows[s][t]);
    m.forgetting[t] = best - a.rows[n - 1][t];
    bwt += a.rows[n - 1][t] - a.rows[t][t];
  }
  if (n > 1) m.backward_transfer = bwt / static_cast<double>(n - 1);
  return m;
}

}  // namespace l2g
