#include <doctest.h>

#include <cmath>

#include "lip/gradcheck.hpp"
#include "lip/tape.hpp"

using namespace lip;

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::random_normal(std::move(shape), rng);
}

}  // namespace

TEST_CASE("tape: add with zeros is the identity") {
  Tape t;
  Tensor x = rand_t({3, 3}, 1);
  Var out = t.add(t.constant(x), t.constant(Tensor::zeros(x.shape())));
  CHECK(t.value(out) == x);
}

TEST_CASE("tape: tanh fixed point and range") {
  Tape t;
  Tensor x = Tensor::from({0.0, -15.0, 15.0, 2.0, -0.7});
  const Tensor& y = t.value(t.tanh(t.constant(x)));
  CHECK(y[0] == 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y[i] > -1.0);
    CHECK(y[i] < 1.0);
  }
}

TEST_CASE("tape: abs backward with seed of ones") {
  Tape t;
  Var x = t.leaf(Tensor::from({-2.0, 3.0}), true);
  Var loss = t.reduce_sum(t.abs(x));
  t.backward(loss);
  CHECK(t.grad(x) == Tensor::from({-1.0, 1.0}));
}

TEST_CASE("tape: binary ops reject shape mismatches") {
  Tape t;
  Var a = t.constant(Tensor::zeros(Shape{2, 2}));
  Var b = t.constant(Tensor::zeros(Shape{2, 3}));
  CHECK_THROWS_AS(t.add(a, b), ShapeError);
  CHECK_THROWS_AS(t.sub(a, b), ShapeError);
  CHECK_THROWS_AS(t.mul(a, b), ShapeError);
}

TEST_CASE("tape: reductions") {
  Tape t;
  CHECK(t.value(t.reduce_sum(t.constant(Tensor::zeros(Shape{5, 5}))))[0] == 0.0);
  CHECK(t.value(t.reduce_mean(t.constant(Tensor::from({1, 2, 3, 4}))))[0] == 2.5);
  // axis reduction keeps the remaining extents
  Tensor m(Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) m[i] = double(i);
  Var r0 = t.reduce(t.constant(m), ReduceOp::kSum, {0});
  CHECK(t.value(r0) == Tensor::from({3, 5, 7}));
  Var r1 = t.reduce(t.constant(m), ReduceOp::kMean, {1});
  CHECK(t.value(r1) == Tensor::from({1, 4}));
  CHECK_THROWS_AS(t.reduce(t.constant(m), ReduceOp::kSum, {2}), ShapeError);
}

TEST_CASE("tape: backward of sum seeds all-ones gradient") {
  Tape t;
  Var x = t.leaf(rand_t({4, 4}, 2), true);
  t.backward(t.reduce_sum(x));
  CHECK(t.grad(x) == Tensor::ones(Shape{4, 4}));
}

TEST_CASE("tape: backward of sum of squares is 2x") {
  Tape t;
  Tensor xv = rand_t({4, 4}, 3);
  Var x = t.leaf(xv, true);
  t.backward(t.reduce_sum(t.square(x)));
  const Tensor g = t.grad(x);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.0 * xv[i]).epsilon(1e-14));
}

TEST_CASE("tape: backward requires a scalar seed") {
  Tape t;
  Var x = t.leaf(rand_t({3, 3}, 4), true);
  Var y = t.square(x);
  CHECK_THROWS_AS(t.backward(y), ValueError);
}

TEST_CASE("tape: unreached leaves read zero gradients") {
  Tape t;
  Var x = t.leaf(rand_t({2, 2}, 5), true);
  Var orphan = t.leaf(rand_t({2, 2}, 6), true);
  t.backward(t.reduce_sum(x));
  CHECK(t.grad(orphan) == Tensor::zeros(Shape{2, 2}));
}

TEST_CASE("tape: spatial gradient values and errors") {
  Tape t;
  CHECK(t.value(t.spatial_gradient(t.constant(Tensor::from({1, 3, 6})), 0)) ==
        Tensor::from({2, 3}));
  // constant input -> zeros
  Var c = t.spatial_gradient(t.constant(Tensor(Shape{4, 4}, 7.5)), 1);
  CHECK(t.value(c) == Tensor::zeros(Shape{4, 3}));
  // linear ramp of slope a -> constant a
  Tensor ramp(Shape{5});
  for (std::size_t i = 0; i < 5; ++i) ramp[i] = 0.25 * double(i);
  const Tensor& g = t.value(t.spatial_gradient(t.constant(ramp), 0));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(t.spatial_gradient(t.constant(Tensor(Shape{1, 4})), 0), ShapeError);
}

TEST_CASE("tape: linearity of backward over a sum of losses") {
  for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
    Tensor xv = rand_t({6, 6}, seed);
    auto grad_of = [&](bool first, bool second) {
      Tape t;
      Var x = t.leaf(xv, true);
      Var l1 = t.reduce_mean(t.square(x));
      Var l2 = t.reduce_mean(t.abs(x));
      Var loss = first && second ? t.add(l1, l2) : (first ? l1 : l2);
      t.backward(loss);
      return t.grad(x);
    };
    const Tensor combined = grad_of(true, true);
    const Tensor sum = grad_of(true, false) + grad_of(false, true);
    for (std::size_t i = 0; i < combined.size(); ++i) {
      CHECK(combined[i] == doctest::Approx(sum[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("tape: forward and backward are bit-deterministic") {
  auto run = [] {
    Tape t;
    Var x = t.leaf(rand_t({8, 8}, 77), true);
    Var y = t.dropout(t.tanh(t.square(x)), 0.3, Mode::kTrain, 99);
    Var loss = t.reduce_mean(t.mul(y, y));
    t.backward(loss);
    return std::pair{t.value(loss)[0], t.grad(x)};
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("batch_norm: eval with identity statistics is the identity") {
  Tape t;
  Tensor x = rand_t({2, 4, 4}, 21);
  Tensor rm = Tensor::zeros(Shape{2});
  Tensor rv = Tensor::ones(Shape{2});
  BatchNormOpts opts;
  opts.eps = 0.0;
  Var y = t.batch_norm(t.constant(x), t.constant(Tensor::ones(Shape{2})),
                       t.constant(Tensor::zeros(Shape{2})), Mode::kEval, &rm, &rv, opts);
  CHECK(t.value(y) == x);
}

TEST_CASE("batch_norm: train output has zero mean and unit variance per channel") {
  Tape t;
  Tensor x = rand_t({3, 8, 8}, 22);
  x.scale(3.0);
  Var y = t.batch_norm(t.constant(x), t.constant(Tensor::ones(Shape{3})),
                       t.constant(Tensor::zeros(Shape{3})), Mode::kTrain, nullptr, nullptr,
                       BatchNormOpts{1e-12, 0.9});
  const Tensor& out = t.value(y);
  const std::size_t m = 64;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += out[c * m + i];
    mean /= double(m);
    for (std::size_t i = 0; i < m; ++i) var += (out[c * m + i] - mean) * (out[c * m + i] - mean);
    var /= double(m);
    CHECK(std::fabs(mean) < 1e-10);
    CHECK(std::fabs(var - 1.0) < 1e-10);
  }
}

TEST_CASE("batch_norm: running statistics follow the momentum rule") {
  Tape t;
  Tensor x = rand_t({2, 4, 4}, 23);
  Tensor rm = Tensor::zeros(Shape{2});
  Tensor rv = Tensor::ones(Shape{2});
  t.batch_norm(t.constant(x), t.constant(Tensor::ones(Shape{2})),
               t.constant(Tensor::zeros(Shape{2})), Mode::kTrain, &rm, &rv,
               BatchNormOpts{1e-5, 0.9});
  const std::size_t m = 16;
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x[c * m + i];
    mean /= double(m);
    for (std::size_t i = 0; i < m; ++i) var += (x[c * m + i] - mean) * (x[c * m + i] - mean);
    var /= double(m);
    CHECK(rm[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
  }
}

TEST_CASE("batch_norm: zero-variance channel stays finite") {
  Tape t;
  Tensor x(Shape{1, 3, 3}, 4.25);  // constant channel, exactly representable
  Var y = t.batch_norm(t.leaf(x, true), t.leaf(Tensor::ones(Shape{1}), true),
                       t.leaf(Tensor::zeros(Shape{1}), true), Mode::kTrain, nullptr, nullptr);
  CHECK(t.value(y).all_finite());
  t.backward(t.reduce_sum(y));
  CHECK(t.value(y) == Tensor::zeros(Shape{1, 3, 3}));
}

TEST_CASE("dropout: eval mode and zero rate are the identity") {
  Tape t;
  Tensor x = rand_t({10}, 31);
  CHECK(t.value(t.dropout(t.constant(x), 0.7, Mode::kEval, 1)) == x);
  CHECK(t.value(t.dropout(t.constant(x), 0.0, Mode::kTrain, 1)) == x);
  CHECK_THROWS_AS(t.dropout(t.constant(x), 1.0, Mode::kTrain, 1), ConfigError);
  CHECK_THROWS_AS(t.dropout(t.constant(x), -0.1, Mode::kTrain, 1), ConfigError);
}

TEST_CASE("dropout: inverted scaling keeps the mean near one") {
  Tape t;
  Tensor ones = Tensor::ones(Shape{10000});
  const Tensor y = t.value(t.dropout(t.constant(ones), 0.5, Mode::kTrain, 424242));
  // standard error of the mean: sqrt(p(1-p)/(1-p)^2 / n) = 0.01 at p = 0.5
  CHECK(std::fabs(y.mean() - 1.0) < 0.03);
  // deterministic per seed
  const Tensor y2 = t.value(t.dropout(t.constant(ones), 0.5, Mode::kTrain, 424242));
  CHECK(y == y2);
}

TEST_CASE("concat: forward layout and backward split") {
  Tape t;
  Tensor a(Shape{1, 2, 2}, 1.0);
  Tensor b(Shape{2, 2, 2}, 2.0);
  Var av = t.leaf(a, true);
  Var bv = t.leaf(b, true);
  Var c = t.concat(av, bv);
  CHECK(t.value(c).shape() == Shape{3, 2, 2});
  CHECK(t.value(c)[0] == 1.0);
  CHECK(t.value(c)[4] == 2.0);
  t.backward(t.reduce_sum(t.scalar_mul(c, 3.0)));
  CHECK(t.grad(av) == Tensor(Shape{1, 2, 2}, 3.0));
  CHECK(t.grad(bv) == Tensor(Shape{2, 2, 2}, 3.0));
  CHECK_THROWS_AS(t.concat(av, t.constant(Tensor(Shape{1, 3, 2}))), ShapeError);
}

TEST_CASE("upsample_nearest: doubles extents and sums gradients per block") {
  Tape t;
  Tensor x(Shape{1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) x[i] = double(i + 1);
  Var xv = t.leaf(x, true);
  Var y = t.upsample_nearest(xv, 2);
  CHECK(t.value(y).shape() == Shape{1, 4, 4});
  CHECK(t.value(y).at(0, 0, 1) == 1.0);
  CHECK(t.value(y).at(0, 3, 3) == 4.0);
  t.backward(t.reduce_sum(y));
  CHECK(t.grad(xv) == Tensor(Shape{1, 2, 2}, 4.0));
}

TEST_CASE("gradcheck suite passes across seeds") {
  for (std::uint64_t seed : {1, 2, 3}) {
    GradCheckOptions o;
    o.seed = seed;
    const auto cases = run_gradcheck(o);
    for (const auto& c : cases) {
      INFO(c.name << " seed " << seed << " err " << c.max_rel_err);
      CHECK(c.pass);
    }
  }
}

TEST_CASE("gradcheck corrupt hook is detected") {
  GradCheckOptions o;
  o.corrupt = true;
  CHECK_FALSE(all_pass(run_gradcheck(o)));
}
