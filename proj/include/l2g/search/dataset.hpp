#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "l2g/tensor/rng.hpp"
#include "l2g/tensor/tensor.hpp"

namespace l2g {

/// Inputs stacked along axis 0 with one integer label per row.
struct ExampleSet {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// Shape of one example (inputs shape without the batch axis).
  Shape example_shape() const;
  /// Throws ContractError if rows, labels or classes disagree.
  void validate() const;
  ExampleSet subset(std::span<const std::size_t> rows) const;
};

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

Batch gather(const ExampleSet& set, std::span<const std::size_t> rows);

/// Contiguous slices of `order` of at most `batch` rows each.
std::vector<std::span<const std::size_t>> batches_of(std::span<const std::size_t> order, std::size_t batch);

/// Label-stratified split. Each class present in `set` must land in both parts.
std::pair<ExampleSet, ExampleSet> split_train_val(const ExampleSet& set, double val_fraction, std::uint64_t seed);

using LogitsFn = std::function<Tensor(const Tensor& inputs)>;

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const LogitsFn& logits, const ExampleSet& set, std::size_t batch = 500);

/// Training produced a non-finite loss; carries the trace recorded so far.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::vector<std::string> trace)
      : NumericError(what), trace_(std::move(trace)) {}
  const std::vector<std::string>& trace() const { return trace_; }

 private:
  std::vector<std::string> trace_;
};

}  // namespace l2g
