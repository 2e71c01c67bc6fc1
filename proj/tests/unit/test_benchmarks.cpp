#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "l2g/benchmarks/baselines.hpp"
#include "l2g/benchmarks/learn2grow.hpp"
#include "l2g/benchmarks/oracle.hpp"

using namespace l2g;

namespace {

std::vector<std::uint8_t> idx_bytes(std::uint32_t magic, const std::vector<std::uint32_t>& dims,
                                    const std::vector<std::uint8_t>& values) {
  std::vector<std::uint8_t> out;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  put(magic);
  for (auto d : dims) put(d);
  out.insert(out.end(), values.begin(), values.end());
  return out;
}

void write_plain(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
}

void write_gz(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  gzFile f = gzopen(p.c_str(), "wb");
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("l2g_bench_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Ten classes of 4x4 "images": class c lights pixel c brightly plus noise.
ImageDataset fake_images(std::size_t per_class_train, std::size_t per_class_test) {
  Rng rng(99);
  auto make = [&](std::size_t per_class) {
    const std::size_t n = per_class * 10;
    ExampleSet s{Tensor({n, 16}), {}, 10};
    for (std::size_t i = 0; i < n; ++i) {
      const int c = static_cast<int>(i % 10);
      s.labels.push_back(c);
      for (std::size_t j = 0; j < 16; ++j) s.inputs[i * 16 + j] = 0.2 * rng.uniform();
      s.inputs[i * 16 + static_cast<std::size_t>(c)] = 1.0;
    }
    return s;
  };
  return {make(per_class_train), make(per_class_test), 4, 4};
}

Topology tiny_mlp(std::size_t in, std::size_t classes) { return Topology::mlp(in, {16, 16}, classes); }

}  // namespace

TEST_CASE("IDX reading") {
  const auto dir = scratch("idx");
  const auto img = idx_bytes(0x803, {3, 2, 2}, {0, 255, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  write_plain(dir / "a.idx", img);
  write_gz(dir / "a.idx.gz", img);
  for (const char* name : {"a.idx", "a.idx.gz"}) {
    IdxArray a = read_idx(dir / name);
    CHECK(a.dims == std::vector<std::uint32_t>{3, 2, 2});
    CHECK(a.values.size() == 12);
    CHECK(a.values[1] == 255);
  }
  write_plain(dir / "bad.idx", idx_bytes(0x1234, {1}, {0}));
  CHECK_THROWS_AS(read_idx(dir / "bad.idx"), DataError);
  write_plain(dir / "short.idx", idx_bytes(0x801, {5}, {1, 2}));
  CHECK_THROWS_AS(read_idx(dir / "short.idx"), DataError);

  SUBCASE("MNIST layout with a missing file") {
    const auto mn = scratch("mnist");
    write_gz(mn / "train-images-idx3-ubyte.gz", idx_bytes(0x803, {2, 2, 2}, {0, 0, 0, 0, 255, 255, 255, 255}));
    write_plain(mn / "train-labels-idx1-ubyte", idx_bytes(0x801, {2}, {3, 7}));
    write_gz(mn / "t10k-images-idx3-ubyte.gz", idx_bytes(0x803, {1, 2, 2}, {0, 51, 102, 255}));
    CHECK_THROWS_WITH_AS(load_mnist(mn), doctest::Contains("t10k-labels-idx1-ubyte"), DataError);
    write_gz(mn / "t10k-labels-idx1-ubyte.gz", idx_bytes(0x801, {1}, {9}));
    ImageDataset d = load_mnist(mn);
    CHECK(d.rows == 2);
    CHECK(d.train.labels == std::vector<int>{3, 7});
    CHECK(d.test.inputs[1] == doctest::Approx(0.2));
    CHECK(d.train.inputs.shape() == Shape{2, 4});
  }
}

TEST_CASE("permuted stream") {
  const ImageDataset base = fake_images(30, 10);
  PermutedOptions o;
  o.n_tasks = 3;
  o.train_per_task = 100;
  o.val_per_task = 50;
  o.test_per_task = 40;
  o.seed = 4;
  const TaskStream s = permuted_stream(base, o);
  REQUIRE(s.size() == 3);
  CHECK(s.head_mode == HeadMode::shared);

  SUBCASE("task 0 is the raw data") {
    const auto& t0 = s.tasks[0];
    // Recover each sampled row from the base set by its bright pixel and noise pattern.
    for (std::size_t i = 0; i < t0.train.size(); ++i) {
      bool found = false;
      for (std::size_t r = 0; r < base.train.size() && !found; ++r) {
        found = std::equal(t0.train.inputs.ptr() + i * 16, t0.train.inputs.ptr() + (i + 1) * 16,
                           base.train.inputs.ptr() + r * 16);
      }
      CHECK(found);
    }
  }
  SUBCASE("permutations are seeded bijections") {
    for (std::size_t t = 1; t < 3; ++t) {
      auto p = task_permutation(16, 4, t);
      auto sorted = p;
      std::sort(sorted.begin(), sorted.end());
      for (std::uint32_t i = 0; i < 16; ++i) CHECK(sorted[i] == i);
      CHECK(task_permutation(16, 4, t) == p);
    }
    CHECK(task_permutation(16, 4, 1) != task_permutation(16, 4, 2));
    // Pixel histograms of each image survive the permutation.
    const auto& t1 = s.tasks[1];
    std::vector<double> row(t1.train.inputs.ptr(), t1.train.inputs.ptr() + 16);
    std::sort(row.begin(), row.end());
    CHECK(row.back() == 1.0);
  }
  SUBCASE("regression fixture") {
    const auto p = task_permutation(784, 0, 1);
    const std::vector<std::uint32_t> head(p.begin(), p.begin() + 8);
    CHECK(head == std::vector<std::uint32_t>{393, 764, 783, 601, 508, 372, 66, 164});
  }
  SUBCASE("same descriptor, same data") {
    const TaskStream again = permuted_stream(base, o);
    CHECK(again.tasks[2].train.inputs == s.tasks[2].train.inputs);
    CHECK(again.descriptor == s.descriptor);
  }
}

TEST_CASE("split stream") {
  const ImageDataset base = fake_images(30, 10);
  SUBCASE("class partition") {
    auto groups = class_partition(10, 5, 3);
    std::set<int> all;
    for (const auto& g : groups) {
      CHECK(g.size() == 2);
      all.insert(g.begin(), g.end());
    }
    CHECK(all.size() == 10);
    CHECK(class_partition(10, 5, 3) == groups);
    CHECK(groups == std::vector<std::vector<int>>{{1, 2}, {0, 9}, {3, 6}, {5, 7}, {4, 8}});
    CHECK_THROWS_AS(class_partition(10, 3, 0), ContractError);
  }
  SUBCASE("tasks remap labels and keep class balance") {
    SplitOptions o;
    o.n_tasks = 5;
    o.val_per_task = 10;
    o.seed = 3;
    const TaskStream s = split_stream(base, o);
    CHECK(s.head_mode == HeadMode::per_task);
    for (const auto& t : s.tasks) {
      CHECK(t.num_classes == 2);
      CHECK(t.train.size() == 60 - 10);
      CHECK(t.test.size() == 20);
      CHECK(t.train.example_shape() == Shape{1, 4, 4});
      for (int y : t.test.labels) CHECK((y == 0 || y == 1));
      // Remapped label y corresponds to the bright pixel of source class source_classes[y].
      for (std::size_t i = 0; i < t.test.size(); ++i) {
        const int src = t.source_classes[static_cast<std::size_t>(t.test.labels[i])];
        CHECK(t.test.inputs[i * 16 + static_cast<std::size_t>(src)] == 1.0);
      }
      const auto zeros = std::count(t.train.labels.begin(), t.train.labels.end(), 0);
      CHECK(std::abs(static_cast<double>(zeros) - 25.0) <= 10.0);
    }
  }
}

TEST_CASE("synthetic stream") {
  SyntheticOptions o;
  o.n_tasks = 2;
  o.seed = 8;
  const TaskStream s = synthetic_stream(o);
  CHECK(synthetic_stream(o).tasks[1].test.inputs == s.tasks[1].test.inputs);
  for (const auto& t : s.tasks) {
    for (int c = 0; c < 4; ++c) {
      const auto n = std::count(t.train.labels.begin(), t.train.labels.end(), c);
      CHECK(std::abs(static_cast<double>(n) - 150.0) <= 1.0);
    }
    // Least-squares probe on one-hot targets, fit on train and scored on test.
    const std::size_t d = o.dims + 1;
    Eigen::MatrixXd x(t.train.size(), d), y = Eigen::MatrixXd::Zero(t.train.size(), 4);
    for (std::size_t i = 0; i < t.train.size(); ++i) {
      for (std::size_t j = 0; j < o.dims; ++j) x(i, j) = t.train.inputs[i * o.dims + j];
      x(i, o.dims) = 1.0;
      y(i, t.train.labels[i]) = 1.0;
    }
    const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < t.test.size(); ++i) {
      Eigen::RowVectorXd xi(d);
      for (std::size_t j = 0; j < o.dims; ++j) xi(j) = t.test.inputs[i * o.dims + j];
      xi(o.dims) = 1.0;
      Eigen::Index best;
      (xi * w).maxCoeff(&best);
      correct += best == t.test.labels[i];
    }
    CHECK(static_cast<double>(correct) / t.test.size() > 0.95);
  }
}

TEST_CASE("metrics") {
  AccuracyMatrix c{{{0.9}, {0.9, 0.9}, {0.9, 0.9, 0.9}}, {1, 2, 3}};
  Metrics m = compute_metrics(c);
  CHECK(m.final_avg == doctest::Approx(0.9));
  for (double f : m.forgetting) CHECK(f == doctest::Approx(0.0));

  CHECK(compute_metrics({{{0.7}}, {5}}).final_avg == 0.7);

  AccuracyMatrix h{{{0.9}, {0.8, 0.95}, {0.6, 0.9, 0.85}}, {1, 2, 3}};
  Metrics mh = compute_metrics(h);
  CHECK(mh.avg_after_task[1] == doctest::Approx(0.875));
  CHECK(mh.final_avg == doctest::Approx((0.6 + 0.9 + 0.85) / 3));
  CHECK(mh.forgetting[0] == doctest::Approx(0.3));
  CHECK(mh.forgetting[1] == doctest::Approx(0.05));
  CHECK(mh.forgetting[2] == 0.0);
  CHECK(mh.backward_transfer == doctest::Approx(((0.6 - 0.9) + (0.9 - 0.95)) / 2));

  CHECK_THROWS_AS(compute_metrics({{{0.9}, {0.8}}, {}}), ContractError);
  CHECK_THROWS_AS(compute_metrics({{{1.2}}, {}}), ContractError);
}

TEST_CASE("learn-to-grow driver") {
  SyntheticOptions o;
  o.n_tasks = 3;
  o.dims = 8;
  o.classes = 3;
  o.train_per_task = 240;
  o.test_per_task = 90;
  o.seed = 2;
  SearchConfig sc;
  sc.epochs = 4;
  sc.batch = 32;
  sc.seed = 1;
  RetrainConfig rc;
  rc.epochs = 4;
  rc.batch = 32;
  rc.seed = 1;

  SUBCASE("fix with per-task heads never forgets") {
    const TaskStream s = synthetic_stream(o);
    Learn2GrowRun run = run_learn2grow(s, tiny_mlp(8, 3), sc, rc);
    const auto& a = run.accuracy;
    for (std::size_t t = 1; t < 3; ++t) {
      for (std::size_t p = 0; p < t; ++p) {
        CHECK(a.at(t, p) == a.at(p, p));
        CHECK(run.probe_logits[t][p] == run.probe_logits[p][p]);
      }
    }
    for (double f : compute_metrics(a).forgetting) CHECK(f == 0.0);
    std::size_t total = 0;
    for (std::size_t t = 0; t < 3; ++t) {
      total += run.growth[t].total();
      CHECK(a.params_after[t] == total);
      if (t > 0) CHECK(a.params_after[t] >= a.params_after[t - 1]);
    }
    CHECK(run.net.recount_params() == total);
    CHECK(run.search_traces[0].empty());
    CHECK(run.search_traces[1].size() == sc.epochs);
  }
  SUBCASE("an identical second task grows only a head") {
    o.n_tasks = 2;
    o.identical = true;
    sc.beta = 1.0;
    const TaskStream s = synthetic_stream(o);
    Learn2GrowRun run = run_learn2grow(s, tiny_mlp(8, 3), sc, rc);
    for (const auto& c : run.structures[1].choices) CHECK(c.kind == ChoiceKind::reuse);
    CHECK(run.growth[1].total() == run.net.topology().head_size());
  }
  SUBCASE("mismatched topology is rejected") {
    const TaskStream s = synthetic_stream(o);
    CHECK_THROWS_AS(run_learn2grow(s, tiny_mlp(9, 3), sc, rc), ContractError);
  }
}

TEST_CASE("baselines") {
  SyntheticOptions o;
  o.n_tasks = 3;
  o.dims = 8;
  o.classes = 3;
  o.train_per_task = 240;
  o.test_per_task = 90;
  o.head_mode = HeadMode::shared;
  o.seed = 6;
  const TaskStream s = synthetic_stream(o);
  BaselineConfig bc;
  bc.epochs = 4;
  bc.batch = 32;
  bc.fisher_samples = 64;

  const AccuracyMatrix ind = run_baseline(BaselineKind::individual, s, tiny_mlp(8, 3), bc);
  for (double f : compute_metrics(ind).forgetting) CHECK(f == 0.0);
  for (std::size_t t = 1; t < 3; ++t) CHECK(ind.params_after[t] == ind.params_after[0] * (t + 1));

  const AccuracyMatrix sgd = run_baseline(BaselineKind::sgd, s, tiny_mlp(8, 3), bc);
  CHECK(sgd.params_after[2] == sgd.params_after[0]);
  CHECK(compute_metrics(sgd).forgetting[0] > 0.0);
  for (auto kind : {BaselineKind::ewc, BaselineKind::l2}) {
    const AccuracyMatrix a = run_baseline(kind, s, tiny_mlp(8, 3), bc);
    CHECK(a.num_tasks() == 3);
  }
  bc.first_layer_width = 32;
  const AccuracyMatrix wide = run_baseline(BaselineKind::sgd, s, tiny_mlp(8, 3), bc);
  CHECK(wide.params_after[0] == (8 * 32 + 32) + (32 * 16 + 16) + (16 * 3 + 3));
  CHECK(baseline_from_string("ewc") == BaselineKind::ewc);
  CHECK_THROWS_AS(baseline_from_string("hat"), ContractError);
}

TEST_CASE("enumeration oracle") {
  SyntheticOptions o;
  o.n_tasks = 2;
  o.dims = 8;
  o.classes = 3;
  o.train_per_task = 240;
  o.val_per_task = 120;
  o.identical = true;
  o.seed = 5;
  const TaskStream s = synthetic_stream(o);
  const Topology topo = tiny_mlp(8, 3);
  RetrainConfig rc;
  rc.epochs = 5;
  rc.batch = 32;
  RetrainConfig first = rc;
  first.epochs = 40;
  first.lr = 0.05;
  SuperNet net(topo, HeadMode::per_task);
  net.commit(retrain(net, {0, std::vector<LayerChoice>(2)}, s.tasks[0].train, first).request);

  const auto ranking = enumerate_oracle(net, s.tasks[1].train, s.tasks[1].val, rc, true);
  CHECK(ranking.size() == 9);
  for (std::size_t i = 1; i < ranking.size(); ++i) CHECK(ranking[i - 1].val_accuracy >= ranking[i].val_accuracy);
  const TaskStructure all_reuse{1, {{ChoiceKind::reuse, 0, -1}, {ChoiceKind::reuse, 1, -1}}};
  const int r = oracle_rank(ranking, all_reuse);
  REQUIRE(r >= 0);
  CHECK(ranking.front().val_accuracy - ranking[static_cast<std::size_t>(r)].val_accuracy <= 0.005);
  CHECK(ranking[static_cast<std::size_t>(r)].added_params == 0);
  CHECK(enumerate_oracle(net, s.tasks[1].train, s.tasks[1].val, rc, false).size() == 4);

  SuperNet big(Topology::mlp(8, {16, 16, 16, 16}, 3), HeadMode::per_task);
  big.commit(retrain(big, {0, std::vector<LayerChoice>(4)}, s.tasks[0].train, rc).request);
  CHECK_THROWS_WITH_AS(enumerate_oracle(big, s.tasks[1].train, s.tasks[1].val, rc, true), doctest::Contains("64"),
                       ContractError);
}
