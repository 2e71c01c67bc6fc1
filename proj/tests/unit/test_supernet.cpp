#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "l2g/supernet/checkpoint.hpp"
#include "l2g/supernet/supernet.hpp"

using namespace l2g;

namespace {

CommitRequest all_new(const SuperNet& net, int task, Rng& rng) {
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

CommitRequest all_reuse(const SuperNet& net, int task, LayerParams head) {
  CommitRequest r;
  r.task = task;
  for (std::size_t l = 0; l < net.num_slots(); ++l) {
    SlotCommit sc;
    sc.kind = ChoiceKind::reuse;
    sc.variant_id = net.slot(l).variants.front().id;
    r.slots.push_back(std::move(sc));
  }
  r.head = std::move(head);
  return r;
}

Topology small_conv() {
  Topology t;
  t.input_shape = {1, 8, 8};
  LayerSpec c1;
  c1.kind = LayerKind::conv;
  c1.out = 4;
  c1.kernel = 3;
  c1.padding = 1;
  c1.pool = 2;
  LayerSpec c2 = c1;
  c2.out = 6;
  LayerSpec d;
  d.kind = LayerKind::dense;
  d.out = 16;
  t.layers = {c1, c2, d};
  t.num_classes = 3;
  t.resolve();
  return t;
}

Tensor random_batch(const Shape& example, std::size_t batch, Rng& rng) {
  Shape s{batch};
  s.insert(s.end(), example.begin(), example.end());
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("l2g_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("choice counts follow 2|S|+1") {
  Rng rng(1);
  SuperNet net(Topology::mlp(10, {8, 8}, 3), HeadMode::per_task);
  CHECK(net.choice_count(0) == 1);
  net.commit(all_new(net, 0, rng));
  CHECK(net.choice_count(0) == 3);
  CHECK(net.search_space_size() == 9);
  net.commit(all_new(net, 1, rng));
  net.commit(all_new(net, 2, rng));
  CHECK(net.slot(0).variants.size() == 3);
  CHECK(net.choice_count(0) == 7);
  CHECK(net.search_space_size() == 49);
}

TEST_CASE("commit growth accounting") {
  Rng rng(2);
  SuperNet net(Topology::mlp(20, {12, 12, 12}, 4), HeadMode::per_task);
  const auto& t = net.topology();
  auto g0 = net.commit(all_new(net, 0, rng));
  CHECK(g0.slot_params == std::vector<std::size_t>{20 * 12 + 12, 12 * 12 + 12, 12 * 12 + 12});
  CHECK(g0.head_params == t.head_size());
  CHECK(net.total_params() == g0.total());
  CHECK(net.recount_params() == net.total_params());

  SUBCASE("all-Reuse adds only the head") {
    auto g1 = net.commit(all_reuse(net, 1, init_head(t, rng)));
    CHECK(g1.total() == t.head_size());
    CHECK(g1.slot_params == std::vector<std::size_t>{0, 0, 0});
    CHECK(net.recount_params() == net.total_params());
  }
  SUBCASE("New at layer 1 and Reuse above adds first-layer params plus head") {
    CommitRequest r = all_reuse(net, 1, init_head(t, rng));
    r.slots[0].kind = ChoiceKind::new_layer;
    r.slots[0].layer = init_layer(t.layers[0], rng);
    auto g1 = net.commit(r);
    CHECK(g1.total() == t.layers[0].base_size() + t.head_size());
    CHECK(net.recount_params() == net.total_params());
  }
  SUBCASE("double and out-of-order commits are rejected") {
    CHECK_THROWS_AS(net.commit(all_reuse(net, 0, init_head(t, rng))), ContractError);
    CHECK_THROWS_AS(net.commit(all_reuse(net, 2, init_head(t, rng))), ContractError);
  }
  SUBCASE("task 0 must be all New") {
    SuperNet fresh(Topology::mlp(20, {12}, 4), HeadMode::per_task);
    CommitRequest r = all_new(fresh, 0, rng);
    r.slots[0].kind = ChoiceKind::reuse;
    CHECK_THROWS_AS(fresh.commit(r), ContractError);
  }
}

TEST_CASE("shared head mode keeps exactly one head") {
  Rng rng(3);
  SuperNet net(Topology::mlp(6, {5}, 3), HeadMode::shared);
  auto g0 = net.commit(all_new(net, 0, rng));
  CHECK(g0.head_params == net.topology().head_size());
  auto g1 = net.commit(all_reuse(net, 1, init_head(net.topology(), rng)));
  CHECK(g1.total() == 0);
  CHECK(net.heads().size() == 1);
  CHECK(&net.head_for(0) == &net.head_for(1));
}

TEST_CASE("adapter sizes") {
  SUBCASE("3x3 conv adapter is one ninth of the kernel") {
    Topology t = small_conv();
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& s = t.layers[l];
      CHECK(s.adapter_supported());
      CHECK(s.adapter_size() == s.out * s.in_features());
      CHECK(s.adapter_size() * 9 == numel(s.weight_shape()));
    }
  }
  SUBCASE("dense adapters stay within a quarter of the base layer") {
    for (std::size_t in : {8, 16, 40, 300, 784}) {
      for (std::size_t out : {8, 16, 64, 300}) {
        Topology t = Topology::mlp(in, {out}, 2);
        CHECK(t.layers[0].adapter_size() * 4 <= t.layers[0].base_size());
      }
    }
  }
  SUBCASE("1x1 conv adapter must land on the same grid") {
    Topology t;
    t.input_shape = {2, 7, 7};
    LayerSpec c;
    c.kind = LayerKind::conv;
    c.out = 3;
    c.kernel = 2;
    t.layers = {c};
    t.num_classes = 2;
    t.resolve();
    CHECK_FALSE(t.layers[0].adapter_supported());
    Rng rng(0);
    CHECK_THROWS_AS(init_adapter(t.layers[0], rng), ContractError);
  }
}

TEST_CASE("forward_task semantics") {
  Rng rng(4);
  SuperNet net(small_conv(), HeadMode::per_task);
  auto r0 = all_new(net, 0, rng);
  net.commit(r0);
  Tensor x = random_batch(net.topology().input_shape, 5, rng);
  const Tensor base = net.logits(x, 0);
  CHECK(base.shape() == Shape{5, 3});

  SUBCASE("all-Reuse with an equal head reproduces the earlier task") {
    net.commit(all_reuse(net, 1, net.head_for(0).params));
    CHECK(net.logits(x, 1) == base);
  }
  SUBCASE("zero adapters leave the Reuse function unchanged") {
    CommitRequest r = all_reuse(net, 1, net.head_for(0).params);
    for (std::size_t l = 0; l < net.num_slots(); ++l) {
      r.slots[l].kind = ChoiceKind::adapt;
      r.slots[l].adapter = init_adapter(net.slot(l).spec, rng);
    }
    auto g = net.commit(r);
    CHECK(net.logits(x, 1) == base);
    CHECK(net.adapters().size() == 3);
    CHECK(g.slot_params[0] == net.slot(0).spec.adapter_size());
  }
  SUBCASE("missing task") { CHECK_THROWS_AS(net.logits(x, 3), ContractError); }
  SUBCASE("reused variants stay bitwise unchanged across later commits") {
    const Tensor w0 = net.slot(1).variants[0].params.weight;
    CommitRequest r = all_reuse(net, 1, init_head(net.topology(), rng));
    r.slots[2].kind = ChoiceKind::new_layer;
    r.slots[2].layer = init_layer(net.slot(2).spec, rng);
    net.commit(r);
    CHECK(net.slot(1).variants[0].params.weight == w0);
    CHECK(net.logits(x, 0) == base);
  }
}

TEST_CASE("param_distance") {
  Rng rng(5);
  SuperNet net(Topology::mlp(10, {6, 6}, 2), HeadMode::per_task);
  net.commit(all_new(net, 0, rng));
  CommitRequest r = all_reuse(net, 1, init_head(net.topology(), rng));
  r.slots[0].kind = ChoiceKind::new_layer;
  r.slots[0].layer = init_layer(net.slot(0).spec, rng);
  net.commit(r);
  CHECK(net.param_distance(0, 1, 1) == 0.0);
  const auto& a = net.slot(0).variants[0].params;
  const auto& b = net.slot(0).variants[1].params;
  const double wd = l2_distance(a.weight, b.weight), bd = l2_distance(a.bias, b.bias);
  CHECK(net.param_distance(0, 1, 0) == doctest::Approx(std::sqrt(wd * wd + bd * bd)));
  CHECK(net.param_distance(0, 1, 0) > 0.0);
  CHECK_THROWS_AS(net.param_distance(0, 1, 2), ContractError);
  CHECK_THROWS_AS(net.param_distance(0, 2, 0), ContractError);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(6);
  SuperNet net(small_conv(), HeadMode::per_task);
  net.commit(all_new(net, 0, rng));
  CommitRequest r = all_reuse(net, 1, init_head(net.topology(), rng));
  r.slots[0].kind = ChoiceKind::adapt;
  r.slots[0].adapter = init_adapter(net.slot(0).spec, rng);
  for (double& v : r.slots[0].adapter->first.data()) v = rng.normal(0.0, 0.1);
  r.slots[2].kind = ChoiceKind::adapt;
  r.slots[2].adapter = init_adapter(net.slot(2).spec, rng);
  r.slots[1].kind = ChoiceKind::new_layer;
  r.slots[1].layer = init_layer(net.slot(1).spec, rng);
  net.commit(r);

  const auto dir = scratch_dir("ckpt");
  save_checkpoint(net, dir);
  SuperNet loaded = load_checkpoint(dir);
  CHECK(loaded.structures() == net.structures());
  CHECK(loaded.total_params() == net.total_params());

  Tensor x = random_batch(net.topology().input_shape, 4, rng);
  for (int t = 0; t < 2; ++t) {
    const Tensor a = net.logits(x, t), b = loaded.logits(x, t);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst <= 1e-6);
  }

  const auto dir2 = scratch_dir("ckpt2");
  save_checkpoint(loaded, dir2);
  CHECK(read_file(dir / "manifest.json") == read_file(dir2 / "manifest.json"));
  CHECK(read_file(dir / "weights.bin") == read_file(dir2 / "weights.bin"));

  auto expect_code = [&](CheckpointErrc code) {
    try {
      load_checkpoint(dir2);
      FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
      CHECK(e.code() == code);
    }
  };
  const std::string blob = read_file(dir / "weights.bin");
  const std::string manifest = read_file(dir / "manifest.json");
  auto write = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir2 / name, std::ios::binary | std::ios::trunc) << bytes;
  };

  SUBCASE("flipped byte") {
    std::string bad = blob;
    bad[bad.size() / 2] ^= 0x5a;
    write("weights.bin", bad);
    expect_code(CheckpointErrc::checksum_mismatch);
  }
  SUBCASE("truncated blob") {
    write("weights.bin", blob.substr(0, blob.size() - 7));
    expect_code(CheckpointErrc::truncated_blob);
  }
  SUBCASE("blob longer than declared") {
    write("weights.bin", blob + "xxxx");
    expect_code(CheckpointErrc::length_mismatch);
  }
  SUBCASE("entry length disagrees with its shape") {
    auto j = nlohmann::json::parse(manifest);
    j["entries"][0]["blob_len"] = j["entries"][0]["blob_len"].get<std::size_t>() + 4;
    write("manifest.json", j.dump());
    expect_code(CheckpointErrc::length_mismatch);
  }
  SUBCASE("version mismatch") {
    auto j = nlohmann::json::parse(manifest);
    j["version"] = kCheckpointVersion + 1;
    write("manifest.json", j.dump());
    expect_code(CheckpointErrc::version_mismatch);
  }
}
