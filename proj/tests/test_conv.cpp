#include <doctest.h>

#include "lip/tape.hpp"
#include "oracles.hpp"

using namespace lip;

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::random_normal(std::move(shape), rng);
}

}  // namespace

TEST_CASE("conv: 1x1 identity kernel reproduces the image") {
  Tape t;
  Tensor img = rand_t({1, 5, 7}, 1);
  Tensor k(Shape{1, 1, 1, 1}, 1.0);
  Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1}, Padding::kSymmetric);
  CHECK(t.value(out) == img);
}

TEST_CASE("conv: symmetric padding preserves constants under an averaging kernel") {
  Tape t;
  Tensor img(Shape{1, 6, 6}, 3.25);
  Tensor k(Shape{1, 1, 3, 3}, 1.0 / 9.0);
  Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1}, Padding::kSymmetric);
  const Tensor& o = t.value(out);
  CHECK(o.shape() == Shape{1, 6, 6});
  for (std::size_t i = 0; i < o.size(); ++i) CHECK(o[i] == doctest::Approx(3.25).epsilon(1e-14));
}

TEST_CASE("conv: constant maps to constant times kernel sum (property)") {
  for (std::uint64_t seed : {5, 6, 7}) {
    Tape t;
    Tensor k = rand_t({2, 1, 3, 3}, seed);
    Tensor img(Shape{1, 8, 8}, 1.75);
    Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1}, Padding::kSymmetric);
    const Tensor& o = t.value(out);
    for (std::size_t co = 0; co < 2; ++co) {
      double ksum = 0.0;
      for (std::size_t i = 0; i < 9; ++i) ksum += k[co * 9 + i];
      for (std::size_t i = 0; i < 64; ++i) {
        CHECK(o[co * 64 + i] == doctest::Approx(1.75 * ksum).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("conv: matches the nested-loop oracle") {
  Tensor img = rand_t({2, 5, 5}, 11);
  Tensor k = rand_t({3, 2, 3, 3}, 12);
  SUBCASE("symmetric, stride 1") {
    Tape t;
    Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1}, Padding::kSymmetric);
    const Tensor ref = oracle::conv2d(img, k, 1, true);
    REQUIRE(t.value(out).shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(t.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  SUBCASE("valid, stride 1") {
    Tape t;
    Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1}, Padding::kNone);
    const Tensor ref = oracle::conv2d(img, k, 1, false);
    REQUIRE(t.value(out).shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(t.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv: stride-2 downsampling matches the oracle and halves extents") {
  Tensor img = rand_t({2, 8, 8}, 13);
  Tensor k = rand_t({4, 2, 2, 2}, 14);
  Tape t;
  Var out = t.conv_nd(t.constant(img), t.constant(k), {2, 2}, Padding::kNone);
  CHECK(t.value(out).shape() == Shape{4, 4, 4});
  const Tensor ref = oracle::conv2d(img, k, 2, false);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(t.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv: 3D matches the oracle") {
  Tensor img = rand_t({2, 4, 4, 4}, 15);
  Tensor k = rand_t({2, 2, 3, 3, 3}, 16);
  Tape t;
  Var out = t.conv_nd(t.constant(img), t.constant(k), {1, 1, 1}, Padding::kSymmetric);
  const Tensor ref = oracle::conv3d(img, k, 1, true);
  REQUIRE(t.value(out).shape() == ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(t.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv: configuration errors") {
  Tape t;
  Var img = t.constant(rand_t({1, 6, 6}, 17));
  Var even = t.constant(rand_t({1, 1, 2, 2}, 18));
  Var odd = t.constant(rand_t({1, 1, 3, 3}, 19));
  // even kernel under symmetric padding
  CHECK_THROWS_AS(t.conv_nd(img, even, {1, 1}, Padding::kSymmetric), ConfigError);
  // extent not divisible by stride
  Var img7 = t.constant(rand_t({1, 7, 7}, 20));
  CHECK_THROWS_AS(t.conv_nd(img7, even, {2, 2}, Padding::kNone), ConfigError);
  // channel mismatch
  Var k2 = t.constant(rand_t({1, 2, 3, 3}, 21));
  CHECK_THROWS_AS(t.conv_nd(img, k2, {1, 1}, Padding::kSymmetric), ShapeError);
  // stride entry count
  CHECK_THROWS_AS(t.conv_nd(img, odd, {1}, Padding::kSymmetric), ConfigError);
}
