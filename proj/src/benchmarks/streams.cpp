#include "l2g/benchmarks/streams.hpp"

#include <algorithm>
#include <numeric>

namespace l2g {
namespace {

ExampleSet permute_columns(const ExampleSet& set, const std::vector<std::uint32_t>& perm) {
  const std::size_t n = set.size(), width = perm.size();
  ExampleSet out{Tensor({n, width}), set.labels, set.num_classes};
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = set.inputs.ptr() + i * width;
    double* dst = out.inputs.ptr() + i * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[perm[j]];
  }
  return out;
}

std::vector<std::size_t> take(const std::vector<std::uint32_t>& perm, std::size_t from, std::size_t count) {
  std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                perm.begin() + static_cast<std::ptrdiff_t>(from + count));
  std::sort(rows.begin(), rows.end());
  return rows;
}

ExampleSet as_images(ExampleSet set, std::size_t rows, std::size_t cols) {
  set.inputs = set.inputs.reshaped({set.size(), 1, rows, cols});
  return set;
}

}  // namespace

Shape TaskStream::input_shape() const {
  if (tasks.empty()) throw ContractError("empty task stream");
  return tasks.front().train.example_shape();
}

std::vector<std::uint32_t> task_permutation(std::size_t pixels, std::uint64_t seed, std::size_t task) {
  if (task == 0) {
    std::vector<std::uint32_t> id(pixels);
    std::iota(id.begin(), id.end(), 0u);
    return id;
  }
  Rng rng(seed, 0x9e3000ull + task);
  return rng.permutation(pixels);
}

TaskStream permuted_stream(const ImageDataset& base, const PermutedOptions& o) {
  if (o.n_tasks == 0) throw ContractError("permuted stream needs at least one task");
  if (o.train_per_task + o.val_per_task > base.train.size() || o.test_per_task > base.test.size()) {
    throw ContractError("permuted stream asks for more rows than the base dataset holds");
  }
  if (o.train_per_task == 0 || o.test_per_task == 0) throw ContractError("permuted stream needs train and test rows");
  TaskStream stream;
  stream.head_mode = HeadMode::shared;
  stream.descriptor = {{"kind", "permuted"},
                       {"n_tasks", o.n_tasks},
                       {"train_per_task", o.train_per_task},
                       {"val_per_task", o.val_per_task},
                       {"test_per_task", o.test_per_task},
                       {"seed", o.seed}};
  const std::size_t pixels = base.rows * base.cols;
  for (std::size_t t = 0; t < o.n_tasks; ++t) {
    Rng rng(o.seed, 0x7a5c000ull + t);
    const auto train_perm = rng.permutation(base.train.size());
    const auto test_perm = rng.permutation(base.test.size());
    const auto pixel_perm = task_permutation(pixels, o.seed, t);
    TaskSpec spec;
    spec.index = static_cast<int>(t);
    spec.num_classes = 10;
    spec.train = permute_columns(base.train.subset(take(train_perm, 0, o.train_per_task)), pixel_perm);
    if (o.val_per_task > 0) {
      spec.val = permute_columns(base.train.subset(take(train_perm, o.train_per_task, o.val_per_task)), pixel_perm);
    }
    spec.test = permute_columns(base.test.subset(take(test_perm, 0, o.test_per_task)), pixel_perm);
    stream.tasks.push_back(std::move(spec));
  }
  return stream;
}

std::vector<std::vector<int>> class_partition(std::size_t classes, std::size_t n_tasks, std::uint64_t seed) {
  if (n_tasks == 0 || classes % n_tasks != 0) {
    throw ContractError("cannot split " + std::to_string(classes) + " classes into " + std::to_string(n_tasks) +
                        " equal tasks");
  }
  Rng rng(seed, 0xc1a55);
  const auto perm = rng.permutation(classes);
  const std::size_t k = classes / n_tasks;
  std::vector<std::vector<int>> groups(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    for (std::size_t i = 0; i < k; ++i) groups[t].push_back(static_cast<int>(perm[t * k + i]));
    std::sort(groups[t].begin(), groups[t].end());
  }
  return groups;
}

TaskStream split_stream(const ImageDataset& base, const SplitOptions& o) {
  const auto groups = class_partition(base.train.num_classes, o.n_tasks, o.seed);
  TaskStream stream;
  stream.head_mode = HeadMode::per_task;
  stream.descriptor = {{"kind", "split"},
                       {"n_tasks", o.n_tasks},
                       {"train_per_task", o.train_per_task},
                       {"val_per_task", o.val_per_task},
                       {"test_per_task", o.test_per_task},
                       {"seed", o.seed}};
  auto select = [](const ExampleSet& set, const std::vector<int>& classes, std::vector<std::size_t>& rows) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (std::find(classes.begin(), classes.end(), set.labels[i]) != classes.end()) rows.push_back(i);
    }
  };
  auto remap = [](ExampleSet set, const std::vector<int>& classes) {
    for (int& y : set.labels) y = static_cast<int>(std::find(classes.begin(), classes.end(), y) - classes.begin());
    set.num_classes = classes.size();
    return set;
  };
  for (std::size_t t = 0; t < o.n_tasks; ++t) {
    const auto& classes = groups[t];
    std::vector<std::size_t> pool, test_rows;
    select(base.train, classes, pool);
    select(base.test, classes, test_rows);
    Rng rng(o.seed, 0x5b1700ull + t);
    rng.shuffle(std::span<std::size_t>(pool));
    if (o.val_per_task >= pool.size() || test_rows.empty()) throw ContractError("split stream: task " + std::to_string(t) + " has too few rows");
    const std::size_t n_train =
        o.train_per_task == 0 ? pool.size() - o.val_per_task : std::min(o.train_per_task, pool.size() - o.val_per_task);
    std::vector<std::size_t> val_rows(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(o.val_per_task));
    std::vector<std::size_t> train_rows(pool.begin() + static_cast<std::ptrdiff_t>(o.val_per_task),
                                        pool.begin() + static_cast<std::ptrdiff_t>(o.val_per_task + n_train));
    if (o.test_per_task != 0 && o.test_per_task < test_rows.size()) {
      rng.shuffle(std::span<std::size_t>(test_rows));
      test_rows.resize(o.test_per_task);
    }
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());

    TaskSpec spec;
    spec.index = static_cast<int>(t);
    spec.num_classes = classes.size();
    spec.source_classes = classes;
    spec.train = remap(base.train.subset(train_rows), classes);
    if (!val_rows.empty()) spec.val = remap(base.train.subset(val_rows), classes);
    spec.test = remap(base.test.subset(test_rows), classes);
    if (o.as_images) {
      spec.train = as_images(std::move(spec.train), base.rows, base.cols);
      if (spec.val.size() > 0) spec.val = as_images(std::move(spec.val), base.rows, base.cols);
      spec.test = as_images(std::move(spec.test), base.rows, base.cols);
    }
    stream.tasks.push_back(std::move(spec));
  }
  return stream;
}

TaskStream synthetic_stream(const SyntheticOptions& o) {
  if (o.n_tasks == 0 || o.dims == 0 || o.classes < 2) throw ContractError("synthetic stream: empty configuration");
  TaskStream stream;
  stream.head_mode = o.head_mode;
  stream.descriptor = {{"kind", "synthetic"},
                       {"n_tasks", o.n_tasks},
                       {"dims", o.dims},
                       {"classes", o.classes},
                       {"train_per_task", o.train_per_task},
                       {"val_per_task", o.val_per_task},
                       {"test_per_task", o.test_per_task},
                       {"spread", o.spread},
                       {"permute", o.permute},
                       {"identical", o.identical},
                       {"head_mode", to_string(o.head_mode)},
                       {"seed", o.seed}};
  for (std::size_t t = 0; t < o.n_tasks; ++t) {
    const bool shared_world = o.identical || o.permute;
    Rng mean_rng(o.seed, 0x3ea0000ull + (shared_world ? 0 : t));
    std::vector<double> means(o.classes * o.dims);
    for (double& m : means) m = mean_rng.normal(0.0, o.spread);
    const auto perm = (o.permute && !o.identical) ? task_permutation(o.dims, o.seed, t) : task_permutation(o.dims, 0, 0);
    Rng rng(o.seed, 0x5a3b000ull + t);
    auto draw = [&](std::size_t n) {
      if (n == 0) return ExampleSet{Tensor(), {}, o.classes};
      ExampleSet set{Tensor({n, o.dims}), {}, o.classes};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i % o.classes;
        set.labels.push_back(static_cast<int>(y));
        for (std::size_t d = 0; d < o.dims; ++d) {
          set.inputs[i * o.dims + d] = means[y * o.dims + perm[d]] + rng.normal(0.0, 1.0);
        }
      }
      return set;
    };
    TaskSpec spec;
    spec.index = static_cast<int>(t);
    spec.num_classes = o.classes;
    spec.train = draw(o.train_per_task);
    spec.val = draw(o.val_per_task);
    spec.test = draw(o.test_per_task);
    stream.tasks.push_back(std::move(spec));
  }
  return stream;
}

}  // namespace l2g
