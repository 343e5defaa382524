#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sescore/common.hpp"
#include "sescore/tape.hpp"
#include "sescore/tensor.hpp"

using namespace sescore;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3}, 1.5);
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  t.at(1, 2) = 7.0;
  REQUIRE(t.values[5] == 7.0);
  REQUIRE(t.shape_str() == "[2x3]");
  REQUIRE_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  REQUIRE(Tensor::numel_of({}) == 0);
}

TEST_CASE("matmul matches the hand-expanded 2x2 product") {
  Tape tape;
  auto a = tape.input(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto b = tape.input(Tensor::from({2, 2}, {5, 6, 7, 8}));
  auto c = tape.matmul(a, b);
  const Tensor& out = tape.value(c);
  REQUIRE(out.values == std::vector<double>{19, 22, 43, 50});

  auto bad = tape.input(Tensor::from({3, 1}, {1, 2, 3}));
  REQUIRE_THROWS_AS(tape.matmul(a, bad), ShapeError);
}

TEST_CASE("masked softmax closed form and exact zeros") {
  Tape tape;
  auto s = tape.input(Tensor::from({3}, {std::log(2.0), 0.0, 100.0}));
  auto y = tape.masked_softmax(s, {1, 1, 0});
  const Tensor& out = tape.value(y);
  REQUIRE(out.values[0] == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(out.values[1] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  REQUIRE(out.values[2] == 0.0);
  REQUIRE(out.values[0] + out.values[1] + out.values[2] ==
          Catch::Approx(1.0).margin(1e-12));

  REQUIRE_THROWS_AS(tape.masked_softmax(s, {0, 0, 0}), DegenerateInputError);
}

TEST_CASE("masked softmax normalizes under random masks") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> scores(n), mask(n, 0.0);
    for (auto& v : scores) v = rng.uniform(-30.0, 30.0);
    const std::size_t keep = 1 + rng.below(n);
    for (std::size_t i = 0; i < keep; ++i) mask[i] = 1.0;
    rng.shuffle(mask);
    if (std::count(mask.begin(), mask.end(), 1.0) == 0) mask[0] = 1.0;

    Tape tape(false);
    auto y = tape.masked_softmax(tape.input(Tensor::from({n}, scores)), mask);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = tape.value(y).values[i];
      if (mask[i] == 0.0) {
        REQUIRE(v == 0.0);
      } else {
        REQUIRE(v > 0.0);
      }
      total += v;
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("masked softmax gradient is zero at masked positions") {
  Parameter scores("s", Tensor::from({3}, {std::log(2.0), 0.0, 42.0}));
  Tape tape;
  auto y = tape.masked_softmax(tape.param(scores), {1, 1, 0});
  auto loss = tape.dot(y, tape.input({1.0, 0.0, 0.0}));
  tape.backward(loss);
  REQUIRE(scores.grad.values[0] == Catch::Approx(2.0 / 9.0).margin(1e-14));
  REQUIRE(scores.grad.values[1] == Catch::Approx(-2.0 / 9.0).margin(1e-14));
  REQUIRE(scores.grad.values[2] == 0.0);
}

TEST_CASE("activations hit their fixed points") {
  Tape tape;
  auto x = tape.input({0.0, -2.0, 3.0});
  REQUIRE(tape.value(tape.activate(x, Act::sigmoid)).values[0] == 0.5);
  REQUIRE(tape.value(tape.activate(x, Act::tanh)).values[0] == 0.0);
  const Tensor& r = tape.value(tape.activate(x, Act::relu));
  REQUIRE(r.values[1] == 0.0);
  REQUIRE(r.values[2] == 3.0);
  REQUIRE(tape.value(tape.activate(x, Act::linear)).values ==
          tape.value(x).values);
}

TEST_CASE("square via mul accumulates both branches") {
  Parameter x("x", Tensor::from({1}, {3.0}));
  Tape tape;
  auto v = tape.param(x);
  auto y = tape.mul(v, v);
  tape.backward(tape.sum(y));
  REQUIRE(x.grad.values[0] == 6.0);
}

TEST_CASE("clip passes gradient only strictly inside the band") {
  Parameter x("x", Tensor::from({3}, {-1.0, 0.5, 2.0}));
  Tape tape;
  auto y = tape.clip(tape.param(x), 0.0, 1.0);
  tape.backward(tape.sum(y));
  REQUIRE(x.grad.values[0] == 0.0);
  REQUIRE(x.grad.values[1] == 1.0);
  REQUIRE(x.grad.values[2] == 0.0);
}

TEST_CASE("gradients accumulate across tapes until zeroed") {
  Parameter x("x", Tensor::from({1}, {2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    auto v = tape.param(x);
    tape.backward(tape.sum(tape.scale(v, 3.0)));
  }
  REQUIRE(x.grad.values[0] == 6.0);
  x.zero_grad();
  REQUIRE(x.grad.values[0] == 0.0);
}

TEST_CASE("backward contract violations throw") {
  Parameter x("x", Tensor::from({2}, {1.0, 2.0}));
  {
    Tape tape;
    auto v = tape.param(x);
    REQUIRE_THROWS_AS(tape.backward(v), ContractError);
  }
  {
    Tape tape;
    auto v = tape.param(x);
    auto s = tape.sum(v);
    tape.backward(s);
    REQUIRE_THROWS_AS(tape.backward(s), ContractError);
  }
  {
    Tape tape(false);
    auto v = tape.param(x);
    auto s = tape.sum(v);
    REQUIRE_THROWS_AS(tape.backward(s), ContractError);
  }
}

TEST_CASE("finite differences agree with backward on a mixed chain") {
  Rng rng(7);
  Parameter w("w", glorot_init({3, 2}, 11));
  Parameter b("b", Tensor::from({2}, {0.1, -0.2}));
  Parameter v("v", glorot_init({2}, 12));
  std::vector<double> x = {0.7, -1.3, 2.1};

  auto value = [&]() {
    Tape tape(false);
    auto h = tape.activate(
        tape.affine(tape.input(x), tape.param(w), tape.param(b)), Act::tanh);
    auto u = tape.activate(h, Act::sigmoid);
    auto z = tape.mul(h, u);
    auto c = tape.concat(z, h);
    auto s = tape.dot(c, tape.concat(tape.param(v), tape.param(v)));
    auto p = tape.activate(s, Act::sigmoid);
    return tape.scalar(tape.scale(tape.log(tape.clip(p, 1e-12, 1.0)), -1.0));
  };

  {
    Tape tape;
    auto h = tape.activate(
        tape.affine(tape.input(x), tape.param(w), tape.param(b)), Act::tanh);
    auto u = tape.activate(h, Act::sigmoid);
    auto z = tape.mul(h, u);
    auto c = tape.concat(z, h);
    auto s = tape.dot(c, tape.concat(tape.param(v), tape.param(v)));
    auto p = tape.activate(s, Act::sigmoid);
    tape.backward(tape.scale(tape.log(tape.clip(p, 1e-12, 1.0)), -1.0));
  }
  const double err = finite_diff_check(value, {&w, &b, &v});
  REQUIRE(err <= 1e-4);
}

TEST_CASE("finite differences agree on an attention-like block") {
  Parameter va("va", glorot_init({2}, 21));
  Parameter vo("vo", glorot_init({2}, 22));
  std::vector<std::vector<double>> rows = {{0.4, -0.9}, {1.2, 0.3}, {5.0, 5.0}};
  std::vector<double> mask = {1, 1, 0};

  auto build = [&](Tape& tape) {
    std::vector<Val> rvals;
    std::vector<Val> scores;
    auto vat = tape.param(va);
    for (const auto& r : rows) {
      auto rv = tape.input(r);
      rvals.push_back(rv);
      scores.push_back(tape.dot(rv, vat));
    }
    auto alpha = tape.masked_softmax(tape.stack_scalars(scores), mask);
    auto ctx = tape.lincomb(alpha, rvals);
    return tape.dot(ctx, tape.param(vo));
  };

  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto value = [&]() {
    Tape tape(false);
    return tape.scalar(build(tape));
  };
  REQUIRE(finite_diff_check(value, {&va, &vo}) <= 1e-4);
}

TEST_CASE("glorot init respects its bound and its seed") {
  const Tensor w = glorot_init({4, 6}, 99);
  const double limit = std::sqrt(6.0 / (4 + 6));
  for (double v : w.values) {
    REQUIRE(std::abs(v) <= limit);
  }
  REQUIRE(glorot_init({4, 6}, 99).values == w.values);
  REQUIRE(glorot_init({4, 6}, 100).values != w.values);

  const Tensor r1 = glorot_init({5}, 3);
  const double limit1 = std::sqrt(6.0 / (5 + 5));
  for (double v : r1.values) {
    REQUIRE(std::abs(v) <= limit1);
  }
}

TEST_CASE("rng streams are deterministic and well ranged") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(u == b.uniform());
  }
  Rng c(42);
  double mean = 0.0;
  for (int i = 0; i < 1000; ++i) mean += c.gaussian();
  mean /= 1000.0;
  REQUIRE(std::abs(mean) < 0.2);

  std::vector<int> perm = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng d(7);
  d.shuffle(perm);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  REQUIRE(perm != std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("sub seeds separate named streams") {
  const std::uint64_t root = 42;
  REQUIRE(sub_seed(root, "folds") != sub_seed(root, "init"));
  REQUIRE(sub_seed(root, "folds") != sub_seed(43, "folds"));
  REQUIRE(sub_seed(root, "folds") == sub_seed(root, "folds"));
}

TEST_CASE("significant-digit formatting") {
  REQUIRE(format_sig(0.5, 9) == "0.5");
  REQUIRE(format_sig(1.0 / 3.0, 9) == "0.333333333");
  REQUIRE(format_sig(1.0 / 3.0, 17) == "0.33333333333333331");
}
