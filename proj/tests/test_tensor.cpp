#include <doctest.h>

#include <cmath>
#include <numeric>

#include "protograde/errors.hpp"
#include "protograde/ops.hpp"
#include "support.hpp"

using namespace protograde;
using testing::random_tensor;

TEST_CASE("tensor factories validate shapes") {
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t[4] == 5);
}

TEST_CASE("grad buffer exists only when required") {
  Tensor a = Tensor::zeros({3});
  CHECK_THROWS(a.grad());
  a.set_requires_grad(true);
  CHECK(a.grad().size() == 3);
  CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("clone and detach copy storage") {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor c = a.clone();
  Tensor d = a.detach();
  c[0] = 9;
  d[1] = 9;
  CHECK(a[0] == 1);
  CHECK(a[1] == 2);
  CHECK(c.requires_grad());
  CHECK_FALSE(d.requires_grad());
  CHECK_FALSE(c.same_storage(a));
}

TEST_CASE("conv2d examples") {
  Tape tape;
  SUBCASE("1x1 identity kernel") {
    Rng rng(3);
    const Tensor x = random_tensor({4, 5, 1}, rng);
    const Tensor k = Tensor::from({1, 1, 1, 1}, {1.0});
    const Tensor y = ops::conv2d(tape, x, k, ops::Padding::same);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("3x1 box filter, valid padding") {
    const Tensor x = Tensor::from({4, 1, 1}, {1, 2, 3, 4});
    const Tensor k = Tensor::from({3, 1, 1, 1}, {1, 1, 1});
    const Tensor y = ops::conv2d(tape, x, k, ops::Padding::valid);
    REQUIRE(y.shape() == Shape{2, 1, 1});
    CHECK(y[0] == 6);
    CHECK(y[1] == 9);
  }
  SUBCASE("zero kernel annihilates output and input gradient") {
    Rng rng(4);
    const Tensor x = random_tensor({5, 5, 2}, rng, -1, 1, true);
    const Tensor k = Tensor::zeros({3, 3, 2, 3});
    const Tensor y = ops::conv2d(tape, x, k, ops::Padding::same);
    for (double v : y.data()) CHECK(v == 0.0);
    tape.backward(ops::mean(tape, y));
    for (double g : x.grad()) CHECK(g == 0.0);
  }
  SUBCASE("channel mismatch") {
    const Tensor x = Tensor::zeros({4, 4, 2});
    const Tensor k = Tensor::zeros({3, 3, 1, 2});
    CHECK_THROWS_AS(ops::conv2d(tape, x, k, ops::Padding::same), ShapeError);
  }
  SUBCASE("valid kernel larger than input") {
    const Tensor x = Tensor::zeros({2, 2, 1});
    const Tensor k = Tensor::zeros({3, 1, 1, 1});
    CHECK_THROWS_AS(ops::conv2d(tape, x, k, ops::Padding::valid), ShapeError);
  }
}

TEST_CASE("gap examples") {
  Tape tape;
  CHECK(ops::gap(tape, Tensor::filled({3, 7, 1}, 3.0))[0] == doctest::Approx(3.0));
  CHECK(ops::gap(tape, Tensor::from({2, 2, 1}, {1, 2, 3, 4}))[0] == 2.5);
  const Tensor two = ops::gap(tape, Tensor::from({1, 2, 2}, {0, 5, 0, 7}));
  CHECK(two[0] == 0.0);
  CHECK(two[1] == 6.0);
}

TEST_CASE("gap spreads gradient uniformly") {
  Tape tape;
  Rng rng(5);
  const Tensor x = random_tensor({3, 4, 2}, rng, -1, 1, true);
  const Tensor y = ops::gap(tape, x);
  const double seed[] = {1.0, 1.0};
  tape.backward(y, seed);
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("dense examples") {
  Tape tape;
  const Tensor x = Tensor::from({2}, {1, 2});
  const Tensor y = ops::dense(tape, x, Tensor::from({2, 2}, {1, 0, 0, 2}), Tensor::from({2}, {0, 1}));
  CHECK(y[0] == 1);
  CHECK(y[1] == 5);
  const Tensor id = ops::dense(tape, x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
  CHECK(id[0] == 1);
  CHECK(id[1] == 2);
  const Tensor b = ops::dense(tape, x, Tensor::zeros({2, 3}), Tensor::from({3}, {4, 5, 6}));
  CHECK(b[2] == 6);
  CHECK_THROWS_AS(ops::dense(tape, x, Tensor::zeros({3, 2}), Tensor::zeros({2})), ShapeError);
}

TEST_CASE("activation examples") {
  Tape tape;
  const Tensor r = ops::relu(tape, Tensor::from({3}, {-1, 0, 2}));
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 2);
  CHECK(ops::sigmoid(tape, Tensor::scalar(0.0))[0] == 0.5);
  for (double c : {-1000.0, 0.0, 3.5, 1e6}) {
    const Tensor s = ops::softmax(tape, Tensor::filled({3}, c));
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("softmax rows sum to one and stay inside (0,1)") {
  Tape tape;
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const Tensor s = ops::softmax(tape, random_tensor({5}, rng, -10, 10));
    double total = 0.0;
    for (double v : s.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("cce examples") {
  Tape tape;
  const double first[] = {1, 0, 0};
  CHECK(ops::cce_loss(tape, Tensor::from({3}, {1, 0, 0}), first)[0] <= 1e-7);
  CHECK(ops::cce_loss(tape, Tensor::filled({3}, 1.0 / 3.0), first)[0] == doctest::Approx(std::log(3.0)));
  CHECK(ops::cce_loss(tape, Tensor::from({3}, {0.5, 0.25, 0.25}), first)[0] == doctest::Approx(std::log(2.0)));
  // confidently wrong stays finite thanks to the log floor
  const double last[] = {0, 0, 1};
  CHECK(std::isfinite(ops::cce_loss(tape, Tensor::from({3}, {1, 0, 0}), last)[0]));
  const double two[] = {1, 0};
  CHECK_THROWS_AS(ops::cce_loss(tape, Tensor::from({3}, {1, 0, 0}), two), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("x squared") {
    Tape tape;
    const Tensor x = Tensor::scalar(3.0, true);
    tape.backward(ops::mul(tape, x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("sigmoid slope at zero") {
    Tape tape;
    const Tensor x = Tensor::scalar(0.0, true);
    tape.backward(ops::sigmoid(tape, x));
    CHECK(x.grad()[0] == 0.25);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(tape.backward(ops::relu(tape, x)), ShapeError);
  }
  SUBCASE("leaves off the path get zero") {
    Tape tape;
    const Tensor x = Tensor::scalar(2.0, true);
    const Tensor unused = Tensor::scalar(5.0, true);
    unused.grad();
    tape.backward(ops::mul(tape, x, x));
    CHECK(unused.grad()[0] == 0.0);
  }
}

TEST_CASE("random two-layer net matches central differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({6}, rng);
    const Tensor w1 = random_tensor({6, 5}, rng, -1, 1, true), b1 = random_tensor({5}, rng, -1, 1, true);
    const Tensor w2 = random_tensor({5, 3}, rng, -1, 1, true), b2 = random_tensor({3}, rng, -1, 1, true);
    const double y[] = {0, 1, 0};
    auto loss = [&] {
      for (auto* t : {&w1, &b1, &w2, &b2}) t->zero_grad();
      Tape tape;
      const Tensor h = ops::sigmoid(tape, ops::dense(tape, x, w1, b1));
      const Tensor l = ops::cce_loss(tape, ops::softmax(tape, ops::dense(tape, h, w2, b2)), y);
      tape.backward(l);
      return l.item();
    };
    const auto r = testing::check_gradients({{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}, loss, 1e-4, 1e-4, 1e-6);
    CHECK(r.failures == 0);
    CHECK(r.kinks == 0);
  }
}

TEST_CASE("primitive compositions match central differences") {
  Rng rng(12);
  const Tensor x = random_tensor({6, 5, 2}, rng, -1, 1, true);
  const Tensor k = random_tensor({3, 3, 2, 3}, rng, -0.5, 0.5, true);
  const Tensor b = random_tensor({3}, rng, -0.1, 0.1, true);
  const Tensor kv = random_tensor({3, 1, 3, 2}, rng, -0.5, 0.5, true);
  const Tensor amap = random_tensor({6, 5, 1}, rng, -1, 1, true);
  auto loss = [&] {
    for (auto* t : {&x, &k, &b, &kv, &amap}) t->zero_grad();
    Tape tape;
    Tensor h = ops::add_channel_bias(tape, ops::conv2d(tape, x, k, ops::Padding::same), b);
    h = ops::sigmoid(tape, h);
    const Tensor v = ops::conv2d(tape, h, kv, ops::Padding::same);
    Tensor cat = ops::concat_channels(tape, v, x);
    cat = ops::mul_map(tape, cat, ops::sigmoid(tape, amap));
    cat = ops::add(tape, cat, ops::affine(tape, cat, 0.5, 0.1));
    const Tensor pooled = ops::max_pool2x2(tape, cat);
    const Tensor g = ops::gap(tape, pooled);
    const Tensor parts[] = {g, ops::gap(tape, cat)};
    const Tensor joined = ops::concat(tape, parts);
    const Tensor l = ops::mean(tape, ops::mul(tape, joined, joined));
    tape.backward(l);
    return l.item();
  };
  const auto r = testing::check_gradients({{"x", x}, {"k", k}, {"b", b}, {"kv", kv}, {"amap", amap}}, loss, 1e-5,
                                          1e-4, 1e-6);
  CHECK(r.failures == 0);
  CHECK(r.kinks == 0);
  MESSAGE("worst relative error " << r.worst);
}

TEST_CASE("sgd step") {
  ParameterSet params;
  Tensor p = params.add("p", Tensor::scalar(1.0));
  Tensor z = params.add("z", Tensor::scalar(4.0));
  Tensor f = params.add("f", Tensor::scalar(7.0), true);
  p.grad()[0] = 2.0;
  z.grad()[0] = 0.0;
  CHECK_FALSE(f.requires_grad());
  sgd_step(params, 0.5);
  CHECK(p[0] == 0.0);
  CHECK(z[0] == 4.0);
  CHECK(f[0] == 7.0);
}

TEST_CASE("glorot bounds and determinism") {
  Rng a(9), b(9);
  Tensor t = Tensor::zeros({20, 30}), u = Tensor::zeros({20, 30});
  glorot_uniform(t, 20, 30, a);
  glorot_uniform(u, 20, 30, b);
  const double limit = std::sqrt(6.0 / 50.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(std::abs(t[i]) <= limit);
    CHECK(t[i] == u[i]);
  }
}

TEST_CASE("tape entries are consumed by backward") {
  Tape tape;
  const Tensor x = Tensor::scalar(2.0, true);
  const Tensor y = ops::mul(tape, x, x);
  CHECK(tape.size() == 1);
  tape.backward(y);
  CHECK(tape.size() == 0);
}
