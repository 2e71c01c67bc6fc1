#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "l2g/benchmarks/data.hpp"
#include "l2g/supernet/supernet.hpp"

namespace l2g {

struct TaskSpec {
  int index = 0;
  ExampleSet train;
  ExampleSet val;
  ExampleSet test;
  std::size_t num_classes = 0;
  std::vector<int> source_classes;  ///< original labels, split streams only
};

struct TaskStream {
  std::vector<TaskSpec> tasks;
  HeadMode head_mode = HeadMode::shared;
  nlohmann::json descriptor;

  std::size_t size() const { return tasks.size(); }
  /// Per-example input shape shared by every task.
  Shape input_shape() const;
};

struct PermutedOptions {
  std::size_t n_tasks = 5;
  std::size_t train_per_task = 10000;
  std::size_t val_per_task = 1000;
  std::size_t test_per_task = 2000;
  std::uint64_t seed = 0;
};

/// Pixel permutation of task t; identity for t = 0.
std::vector<std::uint32_t> task_permutation(std::size_t pixels, std::uint64_t seed, std::size_t task);

/// Every task samples its own rows of the base sets and shuffles pixels with
/// task_permutation. Shared head.
TaskStream permuted_stream(const ImageDataset& base, const PermutedOptions& options);

struct SplitOptions {
  std::size_t n_tasks = 5;
  std::size_t train_per_task = 0;  ///< 0 keeps every training row of the task's classes
  std::size_t val_per_task = 500;
  std::size_t test_per_task = 0;   ///< 0 keeps every test row
  std::uint64_t seed = 0;
  bool as_images = true;           ///< [1,rows,cols] inputs instead of flat vectors
};

/// Seeded disjoint partition of 0..classes-1 into n_tasks sorted groups.
std::vector<std::vector<int>> class_partition(std::size_t classes, std::size_t n_tasks, std::uint64_t seed);

/// Labels are remapped to each task's position in its sorted class group. Per-task heads.
TaskStream split_stream(const ImageDataset& base, const SplitOptions& options);

struct SyntheticOptions {
  std::size_t n_tasks = 3;
  std::size_t dims = 16;
  std::size_t classes = 4;
  std::size_t train_per_task = 600;
  std::size_t val_per_task = 200;
  std::size_t test_per_task = 400;
  double spread = 2.0;      ///< std of the class means; noise has unit std
  bool permute = true;      ///< tasks >= 1 shuffle input dimensions
  bool identical = false;   ///< every task reuses task 0's distribution
  HeadMode head_mode = HeadMode::per_task;
  std::uint64_t seed = 0;
};

/// Gaussian class clusters; labels cycle through the classes so marginals are uniform.
TaskStream synthetic_stream(const SyntheticOptions& options);

}  // namespace l2g
