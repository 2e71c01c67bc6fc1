#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "l2g/retrain/retrain.hpp"
#include "l2g/search/search.hpp"
#include "l2g/tensor/gradcheck.hpp"

using namespace l2g;
using l2g::testing::clusters;

namespace {

/// Task 0 trained briefly so reused features are meaningful.
SuperNet trained_net(const Topology& topo, const ExampleSet& data, HeadMode mode, std::uint64_t seed) {
  SuperNet net(topo, mode);
  TaskStructure all_new{0, std::vector<LayerChoice>(topo.layers.size())};
  RetrainConfig rc;
  rc.epochs = 10;
  rc.batch = 32;
  rc.seed = seed;
  net.commit(retrain(net, all_new, data, rc).request);
  return net;
}

}  // namespace

TEST_CASE("split_train_val") {
  ExampleSet set = clusters(103, 4, 3, 2.0, 7);
  for (std::size_t i = 0; i < set.size(); ++i) set.inputs[i * 4] = static_cast<double>(i);  // row tag

  auto [train, val] = split_train_val(set, 0.5, 11);
  CHECK(train.size() + val.size() == set.size());
  std::set<double> seen;
  for (const auto* part : {&train, &val}) {
    for (std::size_t i = 0; i < part->size(); ++i) seen.insert(part->inputs[i * 4]);
  }
  CHECK(seen.size() == set.size());

  SUBCASE("per-class counts within one of proportional") {
    for (double f : {0.2, 0.5, 0.7}) {
      auto [tr, va] = split_train_val(set, f, 3);
      for (int c = 0; c < 3; ++c) {
        const auto total = std::count(set.labels.begin(), set.labels.end(), c);
        const auto nv = std::count(va.labels.begin(), va.labels.end(), c);
        CHECK(std::abs(static_cast<double>(nv) - f * static_cast<double>(total)) <= 1.0);
      }
    }
  }
  SUBCASE("seeded") {
    auto [t2, v2] = split_train_val(set, 0.5, 11);
    CHECK(t2.inputs == train.inputs);
    CHECK(v2.labels == val.labels);
    auto [t3, v3] = split_train_val(set, 0.5, 12);
    CHECK_FALSE(t3.inputs == train.inputs);
  }
  SUBCASE("a class too small for both parts") {
    ExampleSet tiny = clusters(7, 2, 3, 1.0, 1);
    tiny.labels = {0, 0, 0, 1, 1, 1, 2};
    CHECK_THROWS_WITH_AS(split_train_val(tiny, 0.5, 0), doctest::Contains("larger dataset"), ContractError);
    CHECK_THROWS_AS(split_train_val(set, 1.0, 0), ContractError);
  }
}

TEST_CASE("param_cost") {
  Topology mlp = Topology::mlp(300, {300, 300}, 10);
  CHECK(param_cost(mlp.layers[1], ChoiceKind::reuse) == 0);
  CHECK(param_cost(mlp.layers[1], ChoiceKind::new_layer) == 90300);
  Topology conv;
  conv.input_shape = {8, 6, 6};
  LayerSpec c;
  c.kind = LayerKind::conv;
  c.out = 12;
  c.padding = 1;
  conv.layers = {c};
  conv.num_classes = 2;
  conv.resolve();
  CHECK(param_cost(conv.layers[0], ChoiceKind::adapt) * 9 == 12 * 8 * 9);
}

TEST_CASE("structure_penalty and derive_structure") {
  Rng rng(1);
  SuperNet net(Topology::mlp(8, {16, 16}, 3), HeadMode::per_task);
  net.commit(l2g::testing::all_new_request(net, 0, rng));
  ArchWeights arch = make_arch_weights(net, true);
  REQUIRE(arch.candidates[0].size() == 3);
  const double base = static_cast<double>(net.topology().base_network_size());
  CHECK(arch.cost[0][2] == doctest::Approx(net.slot(0).spec.base_size() / base));

  SUBCASE("saturated reuse costs nothing") {
    for (auto& a : arch.alpha) a[0] = 60.0;
    CHECK(structure_penalty_value(arch) < 1e-20);
  }
  SUBCASE("uniform over reuse and new on one slot") {
    ArchWeights two = make_arch_weights(net, false);
    REQUIRE(two.candidates[0].size() == 2);
    two.alpha[1][0] = 80.0;
    CHECK(structure_penalty_value(two) == doctest::Approx(two.cost[0][1] / 2).epsilon(1e-12));
  }
  SUBCASE("tape value matches and gradients match finite differences") {
    for (auto& a : arch.alpha) {
      for (double& v : a.data()) v = rng.normal(0.0, 1.0);
    }
    Tape tape;
    std::vector<Var> av;
    for (auto& a : arch.alpha) av.push_back(tape.input(a));
    CHECK(structure_penalty(av, arch).value()[0] == doctest::Approx(structure_penalty_value(arch)).epsilon(1e-12));
    std::vector<Tensor*> params;
    for (auto& a : arch.alpha) params.push_back(&a);
    auto r = grad_check(
        [&](Tape& t) {
          std::vector<Var> v;
          for (auto& a : arch.alpha) v.push_back(t.param(a));
          return structure_penalty(v, arch);
        },
        params);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("raising a costlier logit never lowers the penalty") {
    for (int trial = 0; trial < 20; ++trial) {
      for (auto& a : arch.alpha) {
        for (double& v : a.data()) v = rng.normal(0.0, 2.0);
      }
      const double before = structure_penalty_value(arch);
      arch.alpha[1][2] += 0.5;  // New is the costliest candidate
      CHECK(structure_penalty_value(arch) >= before);
    }
  }
  SUBCASE("argmax, shift invariance and ties") {
    arch.alpha[0] = Tensor({3}, {2, 1, 0});
    arch.alpha[1] = Tensor({3}, {1, 1, 0});
    TaskStructure s = derive_structure(arch, 1);
    CHECK(s.choices[0].kind == ChoiceKind::reuse);
    CHECK(s.choices[0].variant_id == net.slot(0).variants[0].id);
    CHECK(s.choices[1].kind == ChoiceKind::reuse);
    for (double& v : arch.alpha[0].data()) v += 7.0;
    CHECK(derive_structure(arch, 1) == s);
    arch.alpha[0] = Tensor({3}, {0, 0.5, 0.5});
    CHECK(derive_structure(arch, 1).choices[0].kind == ChoiceKind::adapt);
    arch.alpha[0] = Tensor({3}, {0, 0, 3});
    CHECK(derive_structure(arch, 1).choices[0].kind == ChoiceKind::new_layer);
  }
}

TEST_CASE("mixed_forward") {
  Rng rng(2);
  SuperNet net(Topology::mlp(8, {16, 16}, 3), HeadMode::per_task);
  net.commit(l2g::testing::all_new_request(net, 0, rng));
  MixedModel model(net, 1, make_arch_weights(net, true), rng);
  // Give adapters nonzero output so all three branches differ.
  for (std::size_t l = 0; l < 2; ++l) {
    for (double& v : model.adapter(l, net.slot(l).variants[0].id).second.data()) v = rng.normal(0.0, 0.3);
  }
  ExampleSet data = clusters(6, 8, 3, 1.0, 3);

  auto check_mixture = [&](std::optional<std::size_t> dominant, double tol) {
    std::size_t calls = 0;
    Tape tape;
    model.forward(tape, tape.input(data.inputs), false, false,
                  [&](std::size_t, const Tensor& mixed, const std::vector<Var>& branches) {
                    ++calls;
                    REQUIRE(branches.size() == 3);
                    double worst = 0.0, hull_violation = 0.0;
                    for (std::size_t i = 0; i < mixed.size(); ++i) {
                      double lo = 1e300, hi = -1e300, mean = 0.0;
                      for (const auto& b : branches) {
                        lo = std::min(lo, b.value()[i]);
                        hi = std::max(hi, b.value()[i]);
                        mean += b.value()[i] / 3.0;
                      }
                      const double want = dominant ? branches[*dominant].value()[i] : mean;
                      worst = std::max(worst, std::abs(mixed[i] - want));
                      hull_violation = std::max({hull_violation, lo - mixed[i] - 1e-12, mixed[i] - hi - 1e-12});
                    }
                    CHECK(worst <= tol);
                    CHECK(hull_violation <= 0.0);
                  });
    CHECK(calls == 2);
  };

  SUBCASE("zero alpha gives the branch mean") { check_mixture(std::nullopt, 1e-10); }
  SUBCASE("a dominant logit selects its branch") {
    for (auto& a : model.arch().alpha) a[1] = 50.0;
    check_mixture(1, 1e-6);
  }
  SUBCASE("gradients with respect to alpha and branch weights") {
    for (auto& a : model.arch().alpha) {
      for (double& v : a.data()) v = rng.normal(0.0, 0.5);
    }
    auto params = model.alpha_params();
    for (Tensor* w : model.weight_params()) params.push_back(w);
    auto r = grad_check(
        [&](Tape& t) {
          return softmax_cross_entropy(model.forward(t, t.input(data.inputs), true, true), data.labels);
        },
        params);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("non-finite activations name the slot") {
    data.inputs[0] = 1e300;
    model.fresh(0).weight[0] = 1e300;
    CHECK_THROWS_WITH_AS(model.logits(data.inputs), doctest::Contains("slot 0"), NumericError);
  }
}

TEST_CASE("search outcomes on small streams") {
  const Topology topo = Topology::mlp(8, {16, 16}, 3);
  const ExampleSet task0 = clusters(240, 8, 3, 2.0, 21);
  SuperNet net = trained_net(topo, task0, HeadMode::per_task, 5);
  const Tensor frozen = net.slot(0).variants[0].params.weight;

  SearchConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 32;
  cfg.lr_alpha = 0.05;
  cfg.seed = 9;

  SUBCASE("a dominant penalty forces all-Reuse") {
    cfg.beta = 1e3;
    auto r = search(net, 1, clusters(240, 8, 3, 2.0, 77), cfg);
    for (const auto& c : r.structure.choices) CHECK(c.kind == ChoiceKind::reuse);
    CHECK(r.trace.size() == cfg.epochs);
    CHECK(net.slot(0).variants[0].params.weight == frozen);
  }
  SUBCASE("an identical task reuses everything") {
    SuperNet shared = trained_net(topo, task0, HeadMode::shared, 5);
    cfg.epochs = 10;
    cfg.warmup_epochs = 3;
    cfg.allow_adapt = false;
    auto r = search(shared, 1, clusters(240, 8, 3, 2.0, 21, 5), cfg);
    for (const auto& c : r.structure.choices) CHECK(c.kind == ChoiceKind::reuse);
  }
  SUBCASE("trace lines are JSON with the documented keys") {
    std::ostringstream os;
    cfg.epochs = 2;
    search(net, 1, task0, cfg, &os);
    const std::string first = os.str().substr(0, os.str().find('\n'));
    for (const char* key : {"\"epoch\"", "\"L_train\"", "\"L_val\"", "\"penalty\"", "\"alpha\""}) {
      CHECK(first.find(key) != std::string::npos);
    }
  }
  SUBCASE("task 0 is not searched") { CHECK_THROWS_AS(search(SuperNet(topo, HeadMode::per_task), 0, task0, cfg), ContractError); }
}

TEST_CASE("with no penalty a useless reused layer loses to New") {
  const Topology topo = Topology::mlp(6, {12}, 3);
  SuperNet net(topo, HeadMode::per_task);
  Rng rng(4);
  CommitRequest r0 = l2g::testing::all_new_request(net, 0, rng);
  for (double& v : r0.slots[0].layer->weight.data()) v = 0.0;
  net.commit(r0);

  SearchConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 32;
  cfg.beta = 0.0;
  cfg.lr_alpha = 0.05;
  cfg.allow_adapt = false;
  auto r = search(net, 1, clusters(240, 6, 3, 2.0, 8), cfg);
  CHECK(r.structure.choices[0].kind == ChoiceKind::new_layer);
}
