#include "l2g/experiments/gradcheck_suite.hpp"

#include "l2g/retrain/retrain.hpp"
#include "l2g/search/search.hpp"
#include "l2g/tensor/ops.hpp"

namespace l2g {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed, 77);
  std::vector<double> w(y.value().size());
  for (double& v : w) v = rng.normal();
  return dot(y, w);
}

std::vector<int> labels(std::size_t n, std::size_t classes) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>((i * 7 + 3) % classes);
  return out;
}

GradCheckResult check_affine() {
  Rng rng(11);
  Tensor x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
  std::vector<Tensor*> ps{&x, &w, &b};
  return grad_check([&](Tape& t) { return weighted_sum(affine(t.param(x), t.param(w), t.param(b)), 1); }, ps);
}

GradCheckResult check_conv2d() {
  Rng rng(12);
  Tensor x = random_tensor({2, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  std::vector<Tensor*> ps{&x, &k, &b};
  return grad_check(
      [&](Tape& t) { return weighted_sum(conv2d(t.param(x), t.param(k), t.param(b), {2, 1}), 2); }, ps);
}

GradCheckResult check_relu() {
  Rng rng(13);
  Tensor x = random_tensor({4, 6}, rng);
  for (double& v : x.data()) v += v >= 0.0 ? 0.1 : -0.1;
  std::vector<Tensor*> ps{&x};
  return grad_check([&](Tape& t) { return weighted_sum(relu(t.param(x)), 3); }, ps);
}

GradCheckResult check_max_pool() {
  Rng rng(14);
  // Distinct values keep every window's argmax stable under the probe step.
  Tensor x({2, 2, 4, 4});
  std::vector<double> grid(x.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.05 * static_cast<double>(i);
  rng.shuffle(std::span<double>(grid));
  for (std::size_t i = 0; i < grid.size(); ++i) x[i] = grid[i];
  std::vector<Tensor*> ps{&x};
  return grad_check([&](Tape& t) { return weighted_sum(flatten(max_pool2d(t.param(x), 2)), 4); }, ps);
}

GradCheckResult check_softmax_ce() {
  Rng rng(15);
  Tensor z = random_tensor({6, 4}, rng, 2.0);
  const auto y = labels(6, 4);
  std::vector<Tensor*> ps{&z};
  return grad_check([&](Tape& t) { return softmax_cross_entropy(t.param(z), y); }, ps);
}

SuperNet committed_net(Rng& rng) {
  SuperNet net(Topology::mlp(6, {8, 8}, 3), HeadMode::per_task);
  CommitRequest r;
  r.task = 0;
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    SlotCommit sc;
    sc.layer = init_layer(net.slot(l).spec, rng);
    r.slots.push_back(std::move(sc));
  }
  r.head = init_head(net.topology(), rng);
  net.commit(r);
  return net;
}

GradCheckResult check_mixed_forward() {
  Rng rng(16);
  SuperNet net = committed_net(rng);
  MixedModel model(net, 1, make_arch_weights(net, true), rng);
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    for (double& v : model.adapter(l, net.slot(l).variants[0].id).second.data()) v = rng.normal(0.0, 0.3);
  }
  for (auto& a : model.arch().alpha) {
    for (double& v : a.data()) v = rng.normal(0.0, 0.5);
  }
  Tensor x = random_tensor({5, 6}, rng);
  const auto y = labels(5, 3);
  auto params = model.alpha_params();
  for (Tensor* w : model.weight_params()) params.push_back(w);
  return grad_check(
      [&](Tape& t) { return softmax_cross_entropy(model.forward(t, t.input(x), true, true), y); }, params);
}

GradCheckResult check_structure_penalty() {
  Rng rng(17);
  SuperNet net = committed_net(rng);
  ArchWeights arch = make_arch_weights(net, true);
  for (auto& a : arch.alpha) {
    for (double& v : a.data()) v = rng.normal(0.0, 1.0);
  }
  std::vector<Tensor*> ps;
  for (auto& a : arch.alpha) ps.push_back(&a);
  return grad_check(
      [&](Tape& t) {
        std::vector<Var> av;
        for (auto& a : arch.alpha) av.push_back(t.param(a));
        return structure_penalty(av, arch);
      },
      ps);
}

GradCheckResult check_ewc_penalty() {
  Rng rng(18);
  Tensor theta = random_tensor({3, 4}, rng);
  FisherState s{0, {{"w", Tensor({3, 4}), random_tensor({3, 4}, rng)}}};
  for (double& v : s.entries[0].fisher.data()) v = rng.uniform();
  const std::vector<FisherState> states{s};
  std::vector<Tensor*> ps{&theta};
  return grad_check(
      [&](Tape& t) {
        std::vector<NamedParam> named{{"w", &theta}};
        return ewc_penalty(t, named, states);
      },
      ps);
}

GradCheckResult check_l2_anchor() {
  Rng rng(19);
  Tensor a = random_tensor({7}, rng), b = random_tensor({2, 3}, rng);
  Tensor anchor_a = random_tensor({7}, rng), anchor_b = random_tensor({2, 3}, rng);
  const std::vector<const Tensor*> anchors{&anchor_a, &anchor_b};
  std::vector<Tensor*> ps{&a, &b};
  return grad_check(
      [&](Tape& t) {
        std::vector<Var> v{t.param(a), t.param(b)};
        return l2_anchor_penalty(v, anchors);
      },
      ps);
}

}  // namespace

std::vector<GradCheckCase> default_gradcheck_cases() {
  return {{"affine", check_affine},
          {"conv2d", check_conv2d},
          {"relu", check_relu},
          {"max_pool2d", check_max_pool},
          {"softmax_cross_entropy", check_softmax_ce},
          {"mixed_forward", check_mixed_forward},
          {"structure_penalty", check_structure_penalty},
          {"ewc_penalty", check_ewc_penalty},
          {"l2_anchor_penalty", check_l2_anchor}};
}

std::vector<GradCheckRow> run_gradcheck_suite(const std::vector<GradCheckCase>& cases, double tolerance) {
  std::vector<GradCheckRow> rows;
  for (const auto& c : cases) {
    GradCheckRow row;
    row.op = c.op;
    try {
      const GradCheckResult r = c.run();
      row.max_rel_error = r.max_rel_error;
      row.coords = r.coords_checked;
      row.passed = r.max_rel_error < tolerance && r.coords_checked > 0;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace l2g
