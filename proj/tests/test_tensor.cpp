#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "normlab/autodiff.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

using namespace normlab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Independent triple-loop product used as the matmul oracle.
Tensor matmul_loop(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (int64_t i = 0; i < a.dim(0); ++i) {
    for (int64_t j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a.at(i) - b.at(i)));
  return worst;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}), DimensionError);
  CHECK(Tensor::identity(3).at(1, 1) == 1.0);
  CHECK(Tensor::identity(3).at(0, 1) == 0.0);
}

TEST_CASE("matmul identity and hand cases") {
  Tensor i2 = Tensor::identity(2);
  Tensor m({2, 2}, {1, 2, 3, 4});
  CHECK(max_abs_diff(matmul(i2, m), m) == 0.0);

  Tensor a({1, 2}, {1, 1});
  Tensor b({2, 1}, {2, 3});
  CHECK(matmul(a, b).at(0, 0) == 5.0);

  CHECK_THROWS_AS(matmul(Tensor({3, 4}), Tensor({5, 2})), DimensionError);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(42);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  CHECK(max_abs_diff(matmul(a, b), matmul_loop(a, b)) < 1e-12);

  // batched lhs folds rows
  Tensor c = random_tensor({2, 3, 4}, rng);
  Tensor got = matmul(c, b);
  for (int64_t bi = 0; bi < 2; ++bi) {
    Tensor slice({3, 4});
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t k = 0; k < 4; ++k) slice.at(i, k) = c.at(bi, i, k);
    Tensor expect = matmul_loop(slice, b);
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 2; ++j) CHECK(got.at(bi, i, j) == doctest::Approx(expect.at(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("reduce mean/var hand values") {
  Tensor x = Tensor::row({1, 3});
  CHECK(reduce(x, {0}, ReduceKind::Mean).item() == 2.0);
  // biased variance: ((1-2)^2 + (3-2)^2) / 2
  CHECK(reduce(x, {0}, ReduceKind::Var).item() == 1.0);
  CHECK_THROWS_AS(reduce(x, {}, ReduceKind::Sum), DegenerateReductionError);
  CHECK_THROWS_AS(reduce(x, {3}, ReduceKind::Sum), DimensionError);
}

TEST_CASE("reduce var matches loop oracle on random 2x3x4 over axes {0,1}") {
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor got = reduce(x, {0, 1}, ReduceKind::Var);
  for (int64_t c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t n = 0; n < 3; ++n) mean += x.at(b, n, c);
    mean /= 6.0;
    double var = 0.0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t n = 0; n < 3; ++n) var += (x.at(b, n, c) - mean) * (x.at(b, n, c) - mean);
    var /= 6.0;
    CHECK(std::fabs(got.at(c) - var) < 1e-12);
  }
}

TEST_CASE("backward on sum and relu") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::row({-1.0, 2.0}));
  Tensor y = reduce_sum(relu(x), {0});
  GradMap grads = tape.backward(y);
  const Tensor& g = grads.at(x.node());
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(1) == 1.0);

  Tape tape2;
  Tensor x2 = tape2.leaf(Tensor::row({5.0, -3.0, 0.5}));
  GradMap g2 = tape2.backward(reduce_sum(x2, {0}));
  for (int64_t i = 0; i < 3; ++i) CHECK(g2.at(x2.node()).at(i) == 1.0);
}

TEST_CASE("backward rejects non-scalar roots and foreign tensors") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), ContractError);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("unused leaves get zero gradients") {
  Tape tape;
  Tensor used = tape.leaf(Tensor::row({1.0, 2.0}));
  Tensor unused = tape.leaf(Tensor::row({3.0}));
  GradMap grads = tape.backward(reduce_sum(used, {0}));
  CHECK(grads.at(unused.node()).size() == 1);
  CHECK(grads.at(unused.node()).at(0) == 0.0);
}

TEST_CASE("backward is linear over loss combinations") {
  Rng rng(3);
  Tensor x0 = random_tensor({4}, rng);
  auto f = [](const Tensor& x) { return reduce_sum(mul(x, x), {0}); };
  auto g = [](const Tensor& x) { return reduce_sum(relu(x), {0}); };
  const double a = 2.5, b = -1.25;

  auto grad_of = [&](const std::function<Tensor(const Tensor&)>& fn) {
    Tape tape;
    Tensor x = tape.leaf(x0.detached());
    return tape.backward(fn(x)).at(x.node());
  };
  Tensor gf = grad_of(f);
  Tensor gg = grad_of(g);
  Tensor gmix = grad_of([&](const Tensor& x) {
    return add(mul_scalar(f(x), a), mul_scalar(g(x), b));
  });
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(std::fabs(gmix.at(i) - (a * gf.at(i) + b * gg.at(i))) < 1e-12);
  }
}

TEST_CASE("tape replay reproduces stored outputs bit-for-bit") {
  Rng rng(11);
  Tape tape;
  Tensor x = tape.leaf(random_tensor({3, 3}, rng));
  Tensor w = tape.leaf(random_tensor({3, 2}, rng));
  Tensor y = reduce_sum(relu(matmul(x, w)), {0, 1});
  (void)y;
  CHECK(tape.replay_reproduces());
}

TEST_CASE("grad_check exact for linear, tight for quadratic") {
  // f = sum(x^2): analytic [2, 4]
  {
    Tape tape;
    Tensor x = tape.leaf(Tensor::row({1.0, 2.0}));
    GradMap grads = tape.backward(reduce_sum(mul(x, x), {0}));
    CHECK(grads.at(x.node()).at(0) == doctest::Approx(2.0));
    CHECK(grads.at(x.node()).at(1) == doctest::Approx(4.0));
  }
  double err = grad_check([](const Tensor& x) { return reduce_sum(mul(x, x), {0}); },
                          Tensor::row({1.0, 2.0}));
  CHECK(err < 1e-7);

  err = grad_check([](const Tensor& x) { return reduce_sum(x, {0}); }, Tensor::row({0.3, -0.7, 1.1}));
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check covers every primitive") {
  Rng rng(19);
  // positive values sitting away from the relu/abs/max kinks probed below
  Tensor x({2, 3}, {0.3, 0.7, 1.2, 0.45, 0.95, 1.4});
  Tensor other = random_tensor({2, 3}, rng, 0.2, 1.5);
  Tensor vec = random_tensor({3}, rng, 0.5, 1.5);

  auto scalarize = [](const Tensor& t) { return reduce_sum(t, {0, 1}); };
  auto check = [&](const std::function<Tensor(const Tensor&)>& f) {
    CHECK(grad_check(f, x) < 1e-6);
  };

  check([&](const Tensor& v) { return scalarize(add(v, other)); });
  check([&](const Tensor& v) { return scalarize(sub(other, v)); });
  check([&](const Tensor& v) { return scalarize(mul(v, other)); });
  check([&](const Tensor& v) { return scalarize(div(other, v)); });
  check([&](const Tensor& v) { return scalarize(neg(v)); });
  check([&](const Tensor& v) { return scalarize(relu(add_scalar(v, -0.5))); });
  check([&](const Tensor& v) { return scalarize(normlab::abs(add_scalar(v, -0.5))); });
  check([&](const Tensor& v) { return scalarize(normlab::sqrt(v)); });
  check([&](const Tensor& v) { return scalarize(normlab::exp(v)); });
  check([&](const Tensor& v) { return scalarize(mul_scalar(v, 3.25)); });
  check([&](const Tensor& v) { return scalarize(pow_scalar(v, 0.65)); });
  check([&](const Tensor& v) { return scalarize(max_scalar(v, 0.4)); });
  // weight the softmax so the loss is not the constant row count
  check([&](const Tensor& v) { return scalarize(mul(softmax_lastdim(v), other)); });
  check([&](const Tensor& v) { return scalarize(add_channels(v, vec)); });
  check([&](const Tensor& v) { return scalarize(scale_channels(v, vec)); });
  check([&](const Tensor& v) { return scalarize(concat_channels(v, other)); });
  check([&](const Tensor& v) { return reduce_sum(mul(reduce(v, {0}, ReduceKind::Var), vec), {0}); });
  Tensor weights = random_tensor({3, 2}, rng);
  check([&](const Tensor& v) { return scalarize(matmul(v, weights)); });

  // gradient w.r.t. the channel vector
  CHECK(grad_check([&](const Tensor& v) { return reduce_sum(scale_channels(x, v), {0, 1}); }, vec) < 1e-6);

  Tensor cond({2, 3});
  cond.at(0, 0) = 1.0;
  cond.at(1, 2) = 1.0;
  check([&](const Tensor& v) { return scalarize(select(cond, v, other)); });
}

TEST_CASE("determinism: identical seeds give bit-identical streams") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(5).fork(7);
  Rng d = Rng(5).fork(7);
  for (int i = 0; i < 10; ++i) CHECK(c.normal() == d.normal());
  CHECK(seed_stream(1, 2, 3) == seed_stream(1, 2, 3));
  CHECK(seed_stream(1, 2, 3) != seed_stream(1, 2, 4));
  CHECK(seed_stream(1, 2, 3) != seed_stream(1, 3, 3));
}
