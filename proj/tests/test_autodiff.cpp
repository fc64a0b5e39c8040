#include "doctest.h"

#include "gradcheck.hpp"
#include "sbs/autodiff.hpp"

using namespace sbs;

TEST_CASE("backward of sum gives ones") {
  auto x = make_leaf(Tensor<double>::from_list({3}, {4, -1, 7}), true);
  backward(sum(x));
  REQUIRE(x->has_grad());
  for (Index i = 0; i < 3; ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("backward of sum(x*x) doubles the input") {
  auto x = make_leaf(Tensor<double>::from_list({2}, {1, 2}), true);
  backward(sum(mul(x, x)));
  CHECK(x->grad[0] == 2.0);
  CHECK(x->grad[1] == 4.0);
}

TEST_CASE("fan-out accumulates gradients additively") {
  auto x = make_leaf(Tensor<double>::from_list({2}, {3, 5}), true);
  // x feeds two consumers that are then combined
  auto a = add(x, x);           // grad 2 per use path
  auto b = mul(x, x);           // grad 2x
  backward(add(sum(a), sum(b)));
  CHECK(x->grad[0] == 2.0 + 2.0 * 3.0);
  CHECK(x->grad[1] == 2.0 + 2.0 * 5.0);
}

TEST_CASE("non-scalar root is rejected") {
  auto x = make_leaf(Tensor<double>::zeros({2, 2}), true);
  auto y = add(x, x);
  CHECK_THROWS_AS(backward(y), ValueError);
}

TEST_CASE("slice and concat invert each other") {
  RandomStream rng(3);
  auto x = make_leaf(Tensor<double>::randn({2, 3, 6}, rng), true);
  auto lo = slice_last(x, 0, 3);
  auto hi = slice_last(x, 3, 3);
  auto re = concat_last(lo, hi);
  CHECK((re->value.raw() == x->value.raw()).all());

  backward(sum(re));
  for (Index i = 0; i < x->value.size(); ++i) CHECK(x->grad[i] == 1.0);

  CHECK_THROWS_AS(slice_last(x, 4, 3), ShapeError);
  auto other = make_leaf(Tensor<double>::zeros({2, 4, 2}), false);
  CHECK_THROWS_AS(concat_last(x, other), ShapeError);
}

TEST_CASE("reshape passes gradients through") {
  auto x = make_leaf(Tensor<double>::from_list({2, 2}, {1, 2, 3, 4}), true);
  auto y = reshape(x, {4});
  backward(sum(mul(y, y)));
  CHECK(x->grad.at({1, 1}) == 8.0);
}

TEST_CASE("composite graph passes the finite-difference oracle") {
  RandomStream rng(17);
  auto x = make_leaf(Tensor<double>::randn({4, 5}, rng), true);
  auto y = make_leaf(Tensor<double>::randn({4, 5}, rng), true);
  auto make_loss = [&]() {
    auto m = mul(x, y);
    auto s = add(m, scale(x, 0.5));
    auto parts = concat_last(slice_last(s, 0, 2), slice_last(s, 2, 3));
    return sum(mul(parts, parts));
  };
  auto res = check_gradients({x, y}, make_loss);
  CHECK(res.failed == 0);
  CHECK(res.checked > 0);
}
