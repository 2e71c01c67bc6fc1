#pragma once

#include "l2g/search/dataset.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g::testing {

/// Gaussian clusters with unit noise around class means drawn at `spread`.
inline ExampleSet clusters(std::size_t n, std::size_t dims, std::size_t classes, double spread, std::uint64_t seed,
                           std::uint64_t sample_stream = 0) {
  Rng mean_rng(seed, 1);
  std::vector<double> means(classes * dims);
  for (double& m : means) m = mean_rng.normal(0.0, spread);
  Rng rng(seed, 2 + sample_stream);
  ExampleSet set{Tensor({n, dims}), {}, classes};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % classes);
    set.labels.push_back(y);
    for (std::size_t d = 0; d < dims; ++d) set.inputs[i * dims + d] = means[y * dims + d] + rng.normal(0.0, 1.0);
  }
  return set;
}

inline CommitRequest all_new_request(const SuperNet& net, int task, Rng& rng) {
  CommitRequest r;
  r.task = task;
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    SlotCommit sc;
    sc.kind = ChoiceKind::new_layer;
    sc.layer = init_layer(net.slot(l).spec, rng);
    r.slots.push_back(std::move(sc));
  }
  r.head = init_head(net.topology(), rng);
  return r;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace l2g::testing
