#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "sbs/nn.hpp"

using namespace sbs;

namespace {

// Seven-loop reference convolution (same padding, stride 1, zero fill,
// extra pad at the high-index side for even kernels).
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const Index pt = (KH - 1) / 2, pl = (KW - 1) / 2;
  Tensor<double> y = Tensor<double>::zeros({B, OC, H, W});
  for (Index bb = 0; bb < B; ++bb)
    for (Index oc = 0; oc < OC; ++oc)
      for (Index h = 0; h < H; ++h)
        for (Index ww = 0; ww < W; ++ww) {
          double acc = b.size() ? b[oc] : 0.0;
          for (Index ic = 0; ic < C; ++ic)
            for (Index kh = 0; kh < KH; ++kh)
              for (Index kw = 0; kw < KW; ++kw) {
                const Index hi = h + kh - pt, wi = ww + kw - pl;
                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                acc += w.at({oc, ic, kh, kw}) * x.at({bb, ic, hi, wi});
              }
          y.at({bb, oc, h, ww}) = acc;
        }
  return y;
}

Var<double> leaf(Tensor<double> t, bool grad = false) {
  return make_leaf<double>(std::move(t), grad);
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  auto x = leaf(Tensor<double>::from_list({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto w = leaf(Tensor<double>::from_list({1, 1, 1, 1}, {1}));
  auto b = leaf(Tensor<double>::zeros({1}));
  auto y = conv2d(x, w, b);
  CHECK((y->value.raw() == x->value.raw()).all());
}

TEST_CASE("conv2d: zero kernel gives the bias everywhere") {
  RandomStream rng(5);
  auto x = leaf(Tensor<double>::randn({2, 3, 4, 5}, rng));
  auto w = leaf(Tensor<double>::zeros({2, 3, 3, 3}));
  auto b = leaf(Tensor<double>::from_list({2}, {0.5, -1.25}));
  auto y = conv2d(x, w, b);
  for (Index bb = 0; bb < 2; ++bb)
    for (Index oc = 0; oc < 2; ++oc)
      for (Index i = 0; i < 20; ++i)
        CHECK(y->value[(bb * 2 + oc) * 20 + i] == b->value[oc]);
}

TEST_CASE("conv2d: 3x3 ones filter on 3x3 ones input counts neighbours") {
  auto x = leaf(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  auto w = leaf(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  auto b = leaf(Tensor<double>::zeros({1}));
  auto y = conv2d(x, w, b);
  // hand convolution with zero padding
  const double expected[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (Index i = 0; i < 9; ++i) CHECK(y->value[i] == expected[i]);
}

TEST_CASE("conv2d: channel mismatch names both dims") {
  auto x = leaf(Tensor<double>::zeros({1, 3, 2, 2}));
  auto w = leaf(Tensor<double>::zeros({1, 4, 1, 1}));
  auto b = leaf(Tensor<double>::zeros({1}));
  try {
    conv2d(x, w, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
}

TEST_CASE("conv2d: same padding preserves spatial dims for odd and even kernels") {
  RandomStream rng(7);
  for (Index kh = 1; kh <= 4; ++kh)
    for (Index kw = 1; kw <= 5; ++kw) {
      auto x = leaf(Tensor<double>::randn({1, 2, 5, 6}, rng));
      RandomStream wr(derive_seed(7, "w", kh, kw));
      auto w = leaf(Tensor<double>::randn({3, 2, kh, kw}, wr));
      auto b = leaf(Tensor<double>::zeros({3}));
      auto y = conv2d(x, w, b);
      CHECK(y->value.dims() == Dims{1, 3, 5, 6});
    }
}

TEST_CASE("conv2d matches the loop oracle on random shapes") {
  for (int trial = 0; trial < 6; ++trial) {
    RandomStream rng(derive_seed(100, "conv-oracle", trial));
    const Index B = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const Index H = 2 + rng.uniform_int(4), W = 2 + rng.uniform_int(7);
    const Index OC = 1 + rng.uniform_int(3);
    const Index KH = 1 + rng.uniform_int(3), KW = 1 + rng.uniform_int(5);
    auto x = leaf(Tensor<double>::randn({B, C, H, W}, rng));
    auto w = leaf(Tensor<double>::randn({OC, C, KH, KW}, rng));
    auto b = leaf(Tensor<double>::randn({OC}, rng));
    auto y = conv2d(x, w, b);
    auto ref = conv2d_oracle(x->value, w->value, b->value);
    for (Index i = 0; i < y->value.size(); ++i)
      CHECK(std::abs(y->value[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("conv2d gradients pass finite differences") {
  for (int trial = 0; trial < 3; ++trial) {
    RandomStream rng(derive_seed(200, "conv-grad", trial));
    const Index KH = 1 + trial, KW = 2 * trial + 1;
    auto x = leaf(Tensor<double>::randn({2, 2, 3, 4}, rng), true);
    auto w = leaf(Tensor<double>::randn({2, 2, KH, KW}, rng), true);
    auto b = leaf(Tensor<double>::randn({2}, rng), true);
    auto make_loss = [&]() {
      auto y = conv2d(x, w, b);
      return sum(mul(y, y));
    };
    auto res = check_gradients({x, w, b}, make_loss);
    CHECK(res.failed == 0);
  }
}

TEST_CASE("batchnorm2d: train phase normalizes per channel") {
  RandomStream rng(31);
  auto x = leaf(Tensor<double>::randn({2, 3, 4, 4}, rng));
  auto st = make_batchnorm_state<double>(3);
  auto y = batchnorm2d(x, st, Phase::Train);
  const Index plane = 16;
  for (Index c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index i = 0; i < plane; ++i) {
        const double v = y->value[(b * 3 + c) * plane + i];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / 32.0;
    const double var = sq / 32.0 - mean * mean;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // epsilon-induced shrink
  }
}

TEST_CASE("batchnorm2d: eval phase is an affine map of running stats") {
  auto x = leaf(Tensor<double>::full({2, 1, 2, 2}, 5.0));
  auto st = make_batchnorm_state<double>(1);
  st.gamma->value[0] = 2.0;
  st.beta_shift->value[0] = 3.0;
  st.running_mean[0] = 5.0;
  st.running_var[0] = 1.0;
  auto y = batchnorm2d(x, st, Phase::Eval);
  for (Index i = 0; i < y->value.size(); ++i)
    CHECK(y->value[i] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("batchnorm2d matches an explicit-loop oracle in train phase") {
  RandomStream rng(33);
  auto xt = Tensor<double>::randn({2, 3, 4, 4}, rng);
  auto st = make_batchnorm_state<double>(3);
  st.gamma->value = Tensor<double>::from_list({3}, {0.7, -1.2, 2.0});
  st.beta_shift->value = Tensor<double>::from_list({3}, {0.1, 0.0, -0.4});
  auto y = batchnorm2d(leaf(xt), st, Phase::Train);

  for (Index c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    Index m = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 4; ++w) {
          sum += xt.at({b, c, h, w});
          ++m;
        }
    const double mean = sum / double(m);
    for (Index b = 0; b < 2; ++b)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 4; ++w) {
          const double d = xt.at({b, c, h, w}) - mean;
          sq += d * d;
        }
    const double var = sq / double(m);
    for (Index b = 0; b < 2; ++b)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 4; ++w) {
          const double expect =
              st.gamma->value[c] * (xt.at({b, c, h, w}) - mean) /
                  std::sqrt(var + st.epsilon) +
              st.beta_shift->value[c];
          CHECK(std::abs(y->value.at({b, c, h, w}) - expect) <= 1e-12);
        }
  }
}

TEST_CASE("batchnorm2d: degenerate train batch is rejected") {
  auto x = leaf(Tensor<double>::zeros({1, 2, 1, 1}));
  auto st = make_batchnorm_state<double>(2);
  CHECK_THROWS_AS(batchnorm2d(x, st, Phase::Train), ValueError);
  CHECK_NOTHROW(batchnorm2d(x, st, Phase::Eval));
}

TEST_CASE("batchnorm2d gradients pass finite differences") {
  for (Phase phase : {Phase::Train, Phase::Eval}) {
    RandomStream rng(35);
    auto x = leaf(Tensor<double>::randn({2, 2, 3, 3}, rng), true);
    auto st = make_batchnorm_state<double>(2);
    st.gamma->value = Tensor<double>::from_list({2}, {1.3, 0.8});
    st.running_mean = Tensor<double>::from_list({2}, {0.2, -0.1});
    st.running_var = Tensor<double>::from_list({2}, {1.5, 0.6});
    // random projection keeps the loss sensitive to x (sum of squares of a
    // normalized batch is nearly constant)
    auto r = leaf(Tensor<double>::randn({2, 2, 3, 3}, rng));
    auto make_loss = [&]() {
      auto y = batchnorm2d(x, st, phase);
      return add(sum(mul(y, r)), sum(mul(mul(y, y), r)));
    };
    auto res = check_gradients({x, st.gamma, st.beta_shift}, make_loss);
    CHECK(res.failed == 0);
  }
}

TEST_CASE("relu basics") {
  auto x = leaf(Tensor<double>::from_list({3}, {-1, 0, 2}), true);
  auto y = relu(x);
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] == 0.0);
  CHECK(y->value[2] == 2.0);

  backward(sum(y));
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 0.0);  // subgradient at 0 is 0
  CHECK(x->grad[2] == 1.0);

  auto neg = leaf(Tensor<double>::full({4}, -3.0), true);
  auto z = relu(neg);
  CHECK((z->value.raw() == 0.0).all());
  backward(sum(z));
  CHECK((neg->grad.raw() == 0.0).all());
}

TEST_CASE("linear: identity and zero weights") {
  auto x = leaf(Tensor<double>::from_list({2, 2}, {1, 2, 3, 4}));
  auto wid = leaf(Tensor<double>::from_list({2, 2}, {1, 0, 0, 1}));
  auto b0 = leaf(Tensor<double>::zeros({2}));
  CHECK((linear(x, wid, b0)->value.raw() == x->value.raw()).all());

  auto wz = leaf(Tensor<double>::zeros({2, 3}));
  auto bb = leaf(Tensor<double>::from_list({3}, {7, 8, 9}));
  auto y = linear(x, wz, bb);
  for (Index r = 0; r < 2; ++r)
    for (Index k = 0; k < 3; ++k) CHECK(y->value.at({r, k}) == bb->value[k]);
}

TEST_CASE("linear matches a triple-loop oracle exactly") {
  RandomStream rng(41);
  auto x = leaf(Tensor<double>::randn({2, 3}, rng), true);
  auto w = leaf(Tensor<double>::randn({3, 2}, rng), true);
  auto b = leaf(Tensor<double>::randn({2}, rng), true);
  auto y = linear(x, w, b);
  for (Index r = 0; r < 2; ++r)
    for (Index k = 0; k < 2; ++k) {
      double acc = b->value[k];
      for (Index d = 0; d < 3; ++d) acc += x->value.at({r, d}) * w->value.at({d, k});
      CHECK(y->value.at({r, k}) == doctest::Approx(acc).epsilon(1e-15));
    }

  CHECK_THROWS_AS(linear(x, leaf(Tensor<double>::zeros({4, 2})), b), ShapeError);

  auto make_loss = [&]() { return sum(mul(linear(x, w, b), linear(x, w, b))); };
  CHECK(check_gradients({x, w, b}, make_loss).failed == 0);
}

TEST_CASE("dropout: identity cases") {
  RandomStream rng(51);
  auto x = leaf(Tensor<double>::randn({4, 4}, rng));
  RandomStream d1(1), d2(2), d3(3);
  CHECK((dropout(x, 0.0, Phase::Train, d1)->value.raw() == x->value.raw()).all());
  CHECK((dropout(x, 0.9, Phase::Eval, d2)->value.raw() == x->value.raw()).all());
  CHECK_THROWS_AS(dropout(x, 1.0, Phase::Train, d3), ValueError);
  CHECK_THROWS_AS(dropout(x, -0.1, Phase::Train, d3), ValueError);
}

TEST_CASE("dropout: inverted scaling keeps the expectation") {
  auto x = leaf(Tensor<double>::scalar(1.0));
  RandomStream rng(52);
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += dropout(x, 0.5, Phase::Train, rng)->value[0];
  const double mean = total / n;
  CHECK(mean >= 0.99);
  CHECK(mean <= 1.01);
}

TEST_CASE("dropout gradient uses the same mask as the forward") {
  auto x = leaf(Tensor<double>::full({64}, 2.0), true);
  RandomStream rng(53);
  auto y = dropout(x, 0.5, Phase::Train, rng);
  backward(sum(y));
  for (Index i = 0; i < 64; ++i) {
    if (y->value[i] == 0.0)
      CHECK(x->grad[i] == 0.0);
    else
      CHECK(x->grad[i] == 2.0);  // 1/(1-p)
  }
}

TEST_CASE("mean_pool_time") {
  auto one = leaf(Tensor<double>::from_list({1, 3}, {4, 5, 6}));
  CHECK((mean_pool_time(one)->value.raw() ==
         Tensor<double>::from_list({3}, {4, 5, 6}).raw())
            .all());

  auto two = leaf(Tensor<double>::from_list({2, 1}, {1, 3}), true);
  auto pooled = mean_pool_time(two);
  CHECK(pooled->value[0] == 2.0);
  backward(sum(pooled));
  CHECK(two->grad[0] == 0.5);  // upstream / T
  CHECK(two->grad[1] == 0.5);

  auto empty = leaf(Tensor<double>::zeros({0, 3}));
  CHECK_THROWS_AS(mean_pool_time(empty), ValueError);
}

TEST_CASE("cross entropy: uniform logits give ln K") {
  auto z = leaf(Tensor<double>::zeros({2, 4}));
  const int labels[2] = {1, 3};
  auto loss = cross_entropy_loss(z, std::span<const int>(labels, 2));
  CHECK(loss->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy: a dominant true logit drives the loss to zero") {
  auto z = leaf(Tensor<double>::from_list({1, 4}, {50, 0, 0, 0}));
  const int labels[1] = {0};
  auto loss = cross_entropy_loss(z, std::span<const int>(labels, 1));
  CHECK(loss->value[0] <= 1e-12);
}

TEST_CASE("cross entropy matches a loop-based softmax oracle") {
  RandomStream rng(61);
  auto z = leaf(Tensor<double>::randn({3, 4}, rng), true);
  const int labels[3] = {0, 2, 3};
  auto loss = cross_entropy_loss(z, std::span<const int>(labels, 3));

  double expect = 0.0;
  for (Index b = 0; b < 3; ++b) {
    double mx = z->value.at({b, 0});
    for (Index k = 1; k < 4; ++k) mx = std::max(mx, z->value.at({b, k}));
    double denom = 0.0;
    for (Index k = 0; k < 4; ++k) denom += std::exp(z->value.at({b, k}) - mx);
    const double p = std::exp(z->value.at({b, labels[b]}) - mx) / denom;
    expect += -std::log(p);
  }
  expect /= 3.0;
  CHECK(std::abs(loss->value[0] - expect) <= 1e-12);

  const int bad[3] = {0, 4, 1};
  CHECK_THROWS_AS(cross_entropy_loss(z, std::span<const int>(bad, 3)),
                  std::out_of_range);

  auto make_loss = [&]() {
    return cross_entropy_loss(z, std::span<const int>(labels, 3));
  };
  CHECK(check_gradients({z}, make_loss).failed == 0);
}

TEST_CASE("adam: zero gradient leaves parameters and moments untouched") {
  auto p = make_leaf(Tensor<double>::from_list({2}, {1.0, -2.0}), true);
  std::vector<Var<double>> params = {p};
  auto st = make_adam_state<double>(params);
  p->accumulate_grad(ArrayX<double>::Zero(2));
  adam_step<double>(params, st);
  CHECK(st.step_count == 1);
  CHECK(p->value[0] == 1.0);
  CHECK(p->value[1] == -2.0);
  CHECK((st.first_moment[0].raw() == 0.0).all());
  CHECK((st.second_moment[0].raw() == 0.0).all());
}

TEST_CASE("adam: first step moves by about lr per element") {
  auto p = make_leaf(Tensor<double>::from_list({3}, {0.0, 1.0, -1.0}), true);
  std::vector<Var<double>> params = {p};
  auto st = make_adam_state<double>(params);
  p->accumulate_grad(ArrayX<double>::Constant(3, 3.7));
  adam_step<double>(params, st);
  for (Index i = 0; i < 3; ++i) {
    const double delta = std::abs(p->value[i] -
                                  (Tensor<double>::from_list({3}, {0.0, 1.0, -1.0})[i]));
    CHECK(delta == doctest::Approx(st.lr).epsilon(1e-6));
  }
}

TEST_CASE("adam: three-step trace matches a scalar recurrence oracle") {
  auto p = make_leaf(Tensor<double>::scalar(0.5), true);
  std::vector<Var<double>> params = {p};
  auto st = make_adam_state<double>(params);

  const double grads[3] = {0.3, -1.1, 0.8};
  double x = 0.5, m = 0.0, v = 0.0;
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 3; ++t) {
    p->clear_grad();
    p->accumulate_grad(ArrayX<double>::Constant(1, grads[t - 1]));
    adam_step<double>(params, st);

    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::abs(p->value[0] - x) <= 1e-12);
  }
  CHECK(st.step_count == 3);
}
