#include <cmath>
#include <numeric>

#include "doctest.h"
#include "l2g/tensor/gradcheck.hpp"
#include "l2g/tensor/ops.hpp"
#include "l2g/tensor/optim.hpp"
#include "l2g/tensor/rng.hpp"

using namespace l2g;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

// Arbitrary fixed weights turn any tensor into a scalar loss with a non-uniform gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed, 99);
  std::vector<double> w(y.value().size());
  for (double& v : w) v = rng.normal();
  return dot(y, w);
}

}  // namespace

TEST_CASE("rng streams are reproducible and independent") {
  Rng a(7), b(7), c(7, 1);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng d(7);
  CHECK(c.next_u64() != d.next_u64());
  Rng e = Rng(7).derive(3), f = Rng(7).derive(3), g = Rng(7).derive(4);
  const auto ev = e.next_u64();
  CHECK(ev == f.next_u64());
  CHECK(ev != g.next_u64());
  auto perm = Rng(5).permutation(100);
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::uint32_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("tensor rejects inconsistent construction") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ContractError);
  CHECK_THROWS_AS(Tensor({2, 0}), ContractError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4}), ContractError);
}

TEST_CASE("affine") {
  Rng rng(1);
  SUBCASE("shape contract") {
    Tape tape;
    Tensor x = random_tensor({2, 3}, rng), w = random_tensor({3, 4}, rng), b({4});
    auto y = affine(tape.input(x), tape.input(w), tape.input(b));
    CHECK(y.shape() == Shape{2, 4});
  }
  SUBCASE("identity weights reproduce input") {
    Tape tape;
    Tensor x = random_tensor({3, 4}, rng), w({4, 4}), b({4});
    for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
    auto y = affine(tape.input(x), tape.input(w), tape.input(b));
    CHECK(y.value() == x);
  }
  SUBCASE("shape mismatch names both shapes") {
    Tape tape;
    Tensor x({2, 3}), w({4, 4}), b({4});
    try {
      affine(tape.input(x), tape.input(w), tape.input(b));
      FAIL("expected ContractError");
    } catch (const ContractError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,4]") != std::string::npos);
    }
  }
  SUBCASE("gradients match central differences") {
    Tensor x = random_tensor({3, 5}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({4}, rng);
    std::vector<Tensor*> params{&x, &w, &b};
    auto r = grad_check([&](Tape& t) { return sum(affine(t.param(x), t.param(w), t.param(b))); }, params);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked == 15 + 20 + 4);
  }
}

TEST_CASE("conv2d") {
  Rng rng(2);
  SUBCASE("1x1 kernel equals per-pixel affine over channels") {
    Tape tape;
    Tensor x = random_tensor({2, 3, 4, 4}, rng), k = random_tensor({5, 3, 1, 1}, rng), b = random_tensor({5}, rng);
    auto y = conv2d(tape.input(x), tape.input(k), tape.input(b), {});
    REQUIRE(y.shape() == Shape{2, 5, 4, 4});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 5; ++o)
        for (std::size_t p = 0; p < 16; ++p) {
          double expect = b[o];
          for (std::size_t c = 0; c < 3; ++c) expect += k[o * 3 + c] * x[(n * 3 + c) * 16 + p];
          CHECK(y.value()[(n * 5 + o) * 16 + p] == doctest::Approx(expect).epsilon(1e-12));
        }
  }
  SUBCASE("centered delta kernel with same padding is the identity per channel") {
    Tape tape;
    Tensor x = random_tensor({1, 2, 5, 5}, rng), k({2, 2, 3, 3});
    k[(0 * 2 + 0) * 9 + 4] = 1.0;
    k[(1 * 2 + 1) * 9 + 4] = 1.0;
    auto y = conv2d(tape.input(x), tape.input(k), std::nullopt, {1, 1});
    CHECK(y.value() == x);
  }
  SUBCASE("kernel larger than padded input") {
    Tape tape;
    Tensor x({1, 1, 3, 3}), k({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(tape.input(x), tape.input(k), std::nullopt, {1, 0}), ContractError);
    CHECK_NOTHROW(conv2d(tape.input(x), tape.input(k), std::nullopt, {1, 1}));
  }
  SUBCASE("gradients match central differences") {
    Tensor x = random_tensor({1, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    std::vector<Tensor*> params{&x, &k, &b};
    auto r = grad_check(
        [&](Tape& t) { return weighted_sum(conv2d(t.param(x), t.param(k), t.param(b), {2, 1}), 4); }, params);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("relu, max_pool2d, flatten") {
  Tape tape;
  Tensor v({2}, {-1.0, 2.0});
  auto r = relu(tape.input(v));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 2.0);

  Tensor c({1, 2, 4, 4}, 3.25);
  auto p = max_pool2d(tape.input(c), 2);
  CHECK(p.shape() == Shape{1, 2, 2, 2});
  for (double x : p.value().data()) CHECK(x == 3.25);

  Tensor odd({1, 1, 5, 4});
  CHECK_THROWS_AS(max_pool2d(tape.input(odd), 2), ContractError);

  auto f = flatten(tape.input(c));
  CHECK(f.shape() == Shape{1, 32});
}

TEST_CASE("max_pool2d backward routes gradient to the window argmax only") {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 4, 6}, rng);
  // Plant a tie: the lowest linear index must win.
  x[0] = 10.0;
  x[1] = 10.0;
  x.set_requires_grad(true);
  Tape tape;
  auto y = max_pool2d(tape.param(x), 2);
  tape.backward(weighted_sum(y, 5));

  // Loop oracle: recompute the weighted-sum coefficients and place each at its window argmax.
  Rng wr(5, 99);
  std::vector<double> w(y.value().size());
  for (double& v : w) v = wr.normal();
  std::vector<double> expect(x.size(), 0.0);
  std::size_t out = 0;
  for (std::size_t plane = 0; plane < 6; ++plane)
    for (std::size_t oi = 0; oi < 2; ++oi)
      for (std::size_t oj = 0; oj < 3; ++oj, ++out) {
        std::size_t best = plane * 24 + (2 * oi) * 6 + 2 * oj;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = plane * 24 + (2 * oi + di) * 6 + 2 * oj + dj;
            if (x[idx] > x[best]) best = idx;
          }
        expect[best] += w[out];
      }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == expect[i]);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits give ln C") {
    Tape tape;
    Tensor l({3, 10}, 0.7);
    std::vector<int> y{0, 4, 9};
    CHECK(softmax_cross_entropy(tape.input(l), y).value()[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("saturated true class") {
    Tape tape;
    Tensor l({1, 10});
    l[3] = 50.0;
    std::vector<int> y{3};
    CHECK(softmax_cross_entropy(tape.input(l), y).value()[0] < 1e-6);
  }
  SUBCASE("label out of range") {
    Tape tape;
    Tensor l({1, 4});
    std::vector<int> y{4};
    CHECK_THROWS_AS(softmax_cross_entropy(tape.input(l), y), ContractError);
  }
  SUBCASE("shift invariance") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor l = random_tensor({4, 7}, rng, 3.0);
      Tensor shifted = l;
      const double c = rng.normal(0.0, 20.0);
      for (double& v : shifted.data()) v += c;
      std::vector<int> y{0, 1, 5, 6};
      Tape tape;
      const double a = softmax_cross_entropy(tape.input(l), y).value()[0];
      const double b = softmax_cross_entropy(tape.input(shifted), y).value()[0];
      CHECK(std::abs(a - b) < 1e-10);
    }
  }
  SUBCASE("gradient matches central differences") {
    Rng rng(7);
    Tensor l = random_tensor({5, 6}, rng, 2.0);
    std::vector<int> y{0, 5, 2, 2, 3};
    std::vector<Tensor*> params{&l};
    CHECK(grad_check([&](Tape& t) { return softmax_cross_entropy(t.param(l), y); }, params).max_rel_error < 1e-4);
  }
}

TEST_CASE("softmax, dot, mix and weighted distance gradients") {
  Rng rng(8);
  Tensor a = random_tensor({4}, rng), b1 = random_tensor({2, 3}, rng), b2 = random_tensor({2, 3}, rng);
  Tensor b3 = random_tensor({2, 3}, rng), b4 = random_tensor({2, 3}, rng);
  Tensor theta = random_tensor({6}, rng), anchor = random_tensor({6}, rng), fisher = random_tensor({6}, rng);
  for (double& f : fisher.data()) f = std::abs(f);
  std::vector<double> z{0.0, 0.2, 0.5, 1.0};
  std::vector<Tensor*> params{&a, &b1, &b2, &b3, &b4, &theta};
  auto r = grad_check(
      [&](Tape& t) {
        auto w = softmax(t.param(a));
        std::vector<Var> branches{t.param(b1), t.param(b2), t.param(b3), t.param(b4)};
        auto m = weighted_sum(mix(w, branches), 11);
        auto p = add(dot(w, z), weighted_sq_distance(t.param(theta), anchor, &fisher));
        return add(m, scale(add(p, weighted_sq_distance(t.param(theta), anchor, nullptr)), 0.5));
      },
      params);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("grad_check catches a corrupted backward") {
  Rng rng(9);
  Tensor x = random_tensor({3, 4}, rng);
  std::vector<Tensor*> params{&x};
  auto broken_square = [](Var v) {
    Tensor y(v.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = v.value()[i] * v.value()[i];
    Tape& tape = v.tape();
    return tape.record("broken_square", std::move(y), tape.needs_grad(v), [v](Tape& t, Var self) {
      auto gy = t.grad_view(self);
      auto gx = t.grad(v);
      // Missing factor of two.
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * v.value()[i];
    });
  };
  auto r = grad_check([&](Tape& t) { return sum(broken_square(t.param(x))); }, params);
  CHECK(r.max_rel_error > 1e-2);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  Tensor x({1}, {1e308});
  CHECK_THROWS_AS(scale(tape.input(x), 1e10), NumericError);
}

TEST_CASE("sgd_step") {
  SUBCASE("lr=1, g=theta zeroes the parameter") {
    std::vector<double> p{1.0, -2.0, 3.5}, v(3, 0.0);
    sgd_step(p, std::vector<double>(p), v, {1.0, 0.0, 0.0});
    for (double x : p) CHECK(x == 0.0);
  }
  SUBCASE("pure weight decay shrinks by (1 - lr wd)") {
    std::vector<double> p{2.0, -4.0}, g(2, 0.0), v(2, 0.0);
    sgd_step(p, g, v, {0.1, 0.0, 0.5});
    CHECK(p[0] == doctest::Approx(2.0 * 0.95).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-4.0 * 0.95).epsilon(1e-15));
  }
  SUBCASE("two momentum steps follow the closed-form recurrence") {
    const double lr = 0.1, m = 0.9, wd = 0.01, g1 = 0.5, g2 = -0.25, th0 = 1.0;
    std::vector<double> p{th0}, v{0.0};
    sgd_step(p, std::vector<double>{g1}, v, {lr, m, wd});
    sgd_step(p, std::vector<double>{g2}, v, {lr, m, wd});
    const double v1 = g1 + wd * th0;
    const double th1 = th0 - lr * v1;
    const double v2 = m * v1 + g2 + wd * th1;
    CHECK(p[0] == doctest::Approx(th1 - lr * v2).epsilon(1e-15));
  }
  SUBCASE("non-finite gradient aborts without touching the parameter") {
    Tensor w({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    w.grad()[1] = std::nan("");
    Sgd opt({0.1});
    std::vector<Tensor*> ps{&w};
    opt.add_group(ps);
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(w[0] == 1.0);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("first step magnitude is lr regardless of gradient scale") {
    for (double g : {1e-6, 1.0, 1e6}) {
      std::vector<double> p{0.0}, m{0.0}, v{0.0};
      adam_step(p, std::vector<double>{g}, m, v, 1, {0.01, 0.9, 0.999, 1e-12});
      CHECK(std::abs(p[0]) == doctest::Approx(0.01).epsilon(1e-5));
    }
  }
  SUBCASE("zero gradient leaves fresh state unchanged") {
    std::vector<double> p{1.25}, m{0.0}, v{0.0};
    adam_step(p, std::vector<double>{0.0}, m, v, 1, {});
    CHECK(p[0] == 1.25);
  }
  SUBCASE("three steps match a scalar hand-rolled oracle") {
    const double lr = 0.05, b1 = 0.8, b2 = 0.95, eps = 1e-8;
    const double grads[3] = {0.3, -1.2, 0.7};
    std::vector<double> p{0.5}, m{0.0}, v{0.0};
    double op = 0.5, om = 0.0, ov = 0.0;
    for (int t = 1; t <= 3; ++t) {
      const double g = grads[t - 1];
      adam_step(p, std::vector<double>{g}, m, v, t, {lr, b1, b2, eps});
      om = b1 * om + (1 - b1) * g;
      ov = b2 * ov + (1 - b2) * g * g;
      const double mh = om / (1 - std::pow(b1, t)), vh = ov / (1 - std::pow(b2, t));
      op -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK(p[0] == doctest::Approx(op).epsilon(1e-14));
  }
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor w({6, 3}), b({3});
    init_fan_in_normal(w, 6, rng);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Sgd opt({0.05, 0.9, 1e-4});
    std::vector<Tensor*> ps{&w, &b};
    opt.add_group(ps);
    Tensor x = random_tensor({8, 6}, rng);
    std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    for (int step = 0; step < 25; ++step) {
      opt.zero_grad();
      Tape tape;
      tape.backward(softmax_cross_entropy(relu(affine(tape.input(x), tape.param(w), tape.param(b))), y));
      opt.step();
    }
    return w;
  };
  CHECK(run(3) == run(3));
  CHECK(!(run(3) == run(4)));
}
