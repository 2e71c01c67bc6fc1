#include "l2g/search/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "l2g/tensor/ops.hpp"

namespace l2g {

Shape ExampleSet::example_shape() const {
  if (inputs.rank() < 2) throw ContractError("example set inputs need a batch axis, got " + to_string(inputs.shape()));
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void ExampleSet::validate() const {
  if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
    throw ContractError("example set has " + std::to_string(labels.size()) + " labels for inputs " +
                        to_string(inputs.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

ExampleSet ExampleSet::subset(std::span<const std::size_t> rows) const {
  Batch b = gather(*this, rows);
  return {std::move(b.inputs), std::move(b.labels), num_classes};
}

Batch gather(const ExampleSet& set, std::span<const std::size_t> rows) {
  const Shape ex = set.example_shape();
  const std::size_t width = numel(ex);
  Shape s{rows.size()};
  s.insert(s.end(), ex.begin(), ex.end());
  Batch b{Tensor(s), {}};
  b.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= set.size()) throw ContractError("row " + std::to_string(rows[i]) + " out of range");
    std::memcpy(b.inputs.ptr() + i * width, set.inputs.ptr() + rows[i] * width, width * sizeof(double));
    b.labels.push_back(set.labels[rows[i]]);
  }
  return b;
}

std::vector<std::span<const std::size_t>> batches_of(std::span<const std::size_t> order, std::size_t batch) {
  if (batch == 0) throw ContractError("batch size must be positive");
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) out.push_back(order.subspan(i, std::min(batch, order.size() - i)));
  return out;
}

std::pair<ExampleSet, ExampleSet> split_train_val(const ExampleSet& set, double val_fraction, std::uint64_t seed) {
  if (set.size() == 0) throw ContractError("split_train_val: empty dataset");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ContractError("split_train_val: val_fraction must be in (0,1), got " + std::to_string(val_fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(set.num_classes);
  for (std::size_t i = 0; i < set.size(); ++i) by_class.at(static_cast<std::size_t>(set.labels[i])).push_back(i);
  Rng rng(seed, 0x5b117);
  std::vector<std::size_t> train_rows, val_rows;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    rng.shuffle(std::span<std::size_t>(rows));
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rows.size())));
    if (n_val == 0 || n_val == rows.size()) {
      throw ContractError("split_train_val: class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                          " examples, too few to appear in both parts at val_fraction " +
                          std::to_string(val_fraction) + "; use a larger dataset");
    }
    val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  return {set.subset(train_rows), set.subset(val_rows)};
}

double accuracy(const LogitsFn& logits, const ExampleSet& set, std::size_t batch) {
  if (set.size() == 0) throw ContractError("accuracy of an empty set");
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t correct = 0;
  for (auto rows : batches_of(order, batch)) {
    Batch b = gather(set, rows);
    const auto pred = argmax_rows(logits(b.inputs));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace l2g
