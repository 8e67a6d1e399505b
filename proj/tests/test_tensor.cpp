#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "msgv/errors.hpp"
#include "msgv/rng.hpp"
#include "msgv/tensor.hpp"

using namespace msgv;

namespace {

Tensor randn_t(Shape shape, Rng& rng) { return Tensor::randn(std::move(shape), rng); }

// Scalar wrapper with a fixed random sink so every output element matters.
std::function<Tensor(const Tensor&)> sink(std::function<Tensor(const Tensor&)> op,
                                          Tensor weights) {
  return [op = std::move(op), weights = std::move(weights)](const Tensor& x) {
    return sum_all(mul(op(x), weights));
  };
}

bool near_kink(std::size_t, double v) { return std::fabs(v) < 1e-3; }

}  // namespace

TEST_CASE("hand-checked forward values") {
  auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from_data({2, 1}, {1, 1});
  auto y = matmul(a, b);
  CHECK(y.at({0, 0}) == doctest::Approx(3.0));
  CHECK(y.at({1, 0}) == doctest::Approx(7.0));

  auto x = Tensor::ones({1, 3, 3});
  auto w = Tensor::ones({1, 1, 3, 3});
  auto c = conv2d(x, w, 0);
  CHECK(c.shape() == Shape{1, 1, 1});
  CHECK(c.item() == doctest::Approx(9.0));
}

TEST_CASE("abs backward uses the sign rule with subgradient 0 at 0") {
  auto x = Tensor::from_data({3}, {-2.0, 0.0, 5.0}).set_requires_grad(true);
  sum_all(abs_t(x)).backward();
  auto g = x.grad();
  CHECK(g[0] == -1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 1.0);
}

TEST_CASE("softmax closed forms and stabilization") {
  auto y = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
  CHECK(y.values()[0] == doctest::Approx(0.5));
  CHECK(y.values()[1] == doctest::Approx(0.5));

  auto z = softmax(Tensor::from_data({2}, {0.0, std::log(3.0)}), 0);
  CHECK(z.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(z.values()[1] == doctest::Approx(0.75).epsilon(1e-12));

  // slices sum to 1 within 1e-12 and the op shrugs off a constant shift
  Rng rng(11);
  auto x = randn_t({4, 6}, rng);
  auto s = softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 6; ++c) sum += s.at({r, c});
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
  auto shifted = softmax(add_scalar(x, 17.5), 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::fabs(s.values()[i] - shifted.values()[i]) < 1e-12);
  }

  // sum(softmax) is constant, so its gradient vanishes
  auto xs = randn_t({5}, rng).set_requires_grad(true);
  sum_all(softmax(xs, 0)).backward();
  for (double g : xs.grad()) CHECK(std::fabs(g) < 1e-14);
}

TEST_CASE("backward basics") {
  auto x = Tensor::scalar(3.0).set_requires_grad(true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto w = Tensor::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
  sum_all(mul(w, w)).backward();
  auto g = w.grad();
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(4.0));
  CHECK(g[2] == doctest::Approx(6.0));
  CHECK(g[3] == doctest::Approx(8.0));

  CHECK_THROWS_AS(Tensor::from_data({2}, {1, 2}).backward(), std::invalid_argument);
}

TEST_CASE("fan-out accumulates one contribution per use") {
  auto x = Tensor::scalar(1.5).set_requires_grad(true);
  add(add(x, x), add(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("grad_check on an exact quadratic is tight") {
  Rng rng(3);
  auto x = randn_t({3, 4}, rng);
  const double err = grad_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check rejects silly eps and catches a planted wrong backward") {
  auto x = Tensor::ones({2});
  CHECK_THROWS_AS(
      grad_check([](const Tensor& t) { return sum_all(t); }, x, 0.5),
      std::invalid_argument);

  // x^2 with a backward rule that claims d/dx = 3x; the checker must notice
  auto bogus_square = [](const Tensor& t) {
    std::vector<double> y(t.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = t.values()[i] * t.values()[i];
    Tensor sq = make_op("bogus_square", t.shape(), std::move(y), {t}, [](detail::Node& n) {
      auto& in = *n.inputs[0];
      auto& dst = in.ensure_grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i] * 3.0 * in.value[i];
    });
    return sum_all(sq);
  };
  const double err = grad_check(bogus_square, Tensor::ones({4}));
  CHECK(err > 1e-2);
}

TEST_CASE("gradients of every primitive match central differences") {
  Rng rng(17);
  const double tol = 1e-4;

  auto check1 = [&](const char* name, std::function<Tensor(const Tensor&)> op, Shape shape,
                    bool kinky = false, bool positive = false) {
    CAPTURE(name);
    Tensor x = randn_t(shape, rng);
    if (positive) {
      auto v = x.values_mut();
      for (auto& d : v) d = 0.5 + std::fabs(d);
    }
    Tensor w = randn_t(op(x).shape(), rng);
    const double err =
        grad_check(sink(op, w), x, 1e-4, kinky ? near_kink : nullptr);
    CHECK_MESSAGE(err < tol, name << " rel err " << err);
  };

  check1("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.7); }, {2, 3, 2, 2});
  check1("mul_scalar", [](const Tensor& x) { return mul_scalar(x, -1.3); }, {4, 5});
  check1("neg", [](const Tensor& x) { return neg(x); }, {7});
  check1("abs", [](const Tensor& x) { return abs_t(x); }, {3, 5}, true);
  check1("sqrt", [](const Tensor& x) { return sqrt_t(x); }, {6}, false, true);
  check1("rsqrt", [](const Tensor& x) { return rsqrt(x); }, {6}, false, true);
  check1("exp", [](const Tensor& x) { return exp_t(x); }, {2, 3});
  check1("log", [](const Tensor& x) { return log_t(x); }, {5}, false, true);
  check1("sin", [](const Tensor& x) { return sin_t(x); }, {3, 2, 2});
  check1("tanh", [](const Tensor& x) { return tanh_t(x); }, {8});
  check1("softplus", [](const Tensor& x) { return softplus(x); }, {9});
  check1("leaky_relu", [](const Tensor& x) { return leaky_relu(x); }, {3, 4}, true);
  check1("reshape", [](const Tensor& x) { return reshape(x, {6, 2}); }, {2, 3, 2});
  check1("transpose2", [](const Tensor& x) { return transpose2(x); }, {3, 4});
  check1("broadcast_to",
         [](const Tensor& x) { return broadcast_to(x, {4, 3, 2}); }, {3, 1});
  check1("sum_axis", [](const Tensor& x) { return sum_axis(x, 1); }, {2, 4, 3});
  check1("mean_axis", [](const Tensor& x) { return mean_axis(x, 0, true); }, {4, 3});
  check1("softmax0", [](const Tensor& x) { return softmax(x, 0); }, {5, 3});
  check1("softmax_inner", [](const Tensor& x) { return softmax(x, 1); }, {2, 4, 3});
  check1("slice", [](const Tensor& x) { return slice(x, 1, 1, 2); }, {2, 4, 2});
  check1("upsample", [](const Tensor& x) { return nearest_upsample2(x); }, {2, 3, 3});
  check1("zero_insert", [](const Tensor& x) { return zero_insert2(x); }, {2, 2, 3});
  check1("avg_pool", [](const Tensor& x) { return avg_pool2(x); }, {2, 4, 4});

  // binary ops, each side in turn, with broadcasting in play
  auto fixed_a = randn_t({2, 3, 4}, rng);
  auto fixed_b = randn_t({3, 1}, rng);
  check1("add_lhs", [&](const Tensor& x) { return add(x, fixed_b); }, {2, 3, 4});
  check1("add_rhs", [&](const Tensor& x) { return add(fixed_a, x); }, {3, 1});
  check1("sub_lhs", [&](const Tensor& x) { return sub(x, fixed_b); }, {2, 3, 4});
  check1("sub_rhs", [&](const Tensor& x) { return sub(fixed_a, x); }, {3, 1});
  check1("mul_lhs", [&](const Tensor& x) { return mul(x, fixed_b); }, {2, 3, 4});
  check1("mul_rhs", [&](const Tensor& x) { return mul(fixed_a, x); }, {3, 1});

  auto mat_b = randn_t({4, 2}, rng);
  auto mat_a = randn_t({3, 4}, rng);
  check1("matmul_lhs", [&](const Tensor& x) { return matmul(x, mat_b); }, {3, 4});
  check1("matmul_rhs", [&](const Tensor& x) { return matmul(mat_a, x); }, {4, 2});

  auto vec = randn_t({5}, rng);
  check1("outer_lhs", [&](const Tensor& x) { return outer(x, vec); }, {3});
  check1("outer_rhs", [&](const Tensor& x) { return outer(vec, x); }, {3});

  auto cat_b = randn_t({2, 3}, rng);
  check1("concat", [&](const Tensor& x) { return concat({x, cat_b}, 0); }, {4, 3});

  auto w1 = randn_t({3, 2, 5}, rng);
  auto x1 = randn_t({2, 7}, rng);
  check1("conv1d_x", [&](const Tensor& x) { return conv1d(x, w1, 2); }, {2, 7});
  check1("conv1d_w", [&](const Tensor& x) { return conv1d(x1, x, 2); }, {3, 2, 5});

  auto w2 = randn_t({3, 2, 3, 3}, rng);
  auto x2 = randn_t({2, 5, 4}, rng);
  check1("conv2d_x", [&](const Tensor& x) { return conv2d(x, w2, 1); }, {2, 5, 4});
  check1("conv2d_w", [&](const Tensor& x) { return conv2d(x2, x, 1); }, {3, 2, 3, 3});
  check1("convT_x", [&](const Tensor& x) { return conv2d_transpose2x(x, w2, 1); },
         {2, 3, 3});
}

TEST_CASE("matmul and conv agree with naive loop oracles") {
  Rng rng(23);

  SUBCASE("matmul") {
    const std::size_t n = 4, k = 6, m = 5;
    auto a = randn_t({n, k}, rng);
    auto b = randn_t({k, m}, rng);
    auto y = matmul(a, b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
        CHECK(std::fabs(y.at({i, j}) - acc) < 1e-10);
      }
  }

  SUBCASE("conv2d with padding") {
    const std::size_t cin = 2, H = 4, W = 5, cout = 3, kh = 3, kw = 3, pad = 1;
    auto x = randn_t({cin, H, W}, rng);
    auto w = randn_t({cout, cin, kh, kw}, rng);
    auto y = conv2d(x, w, pad);
    REQUIRE(y.shape() == Shape{cout, H, W});
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t oy = 0; oy < H; ++oy)
        for (std::size_t ox = 0; ox < W; ++ox) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < cin; ++ic)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t sy = std::ptrdiff_t(oy + ky) - std::ptrdiff_t(pad);
                const std::ptrdiff_t sx = std::ptrdiff_t(ox + kx) - std::ptrdiff_t(pad);
                if (sy < 0 || sy >= std::ptrdiff_t(H) || sx < 0 || sx >= std::ptrdiff_t(W))
                  continue;
                acc += x.at({ic, std::size_t(sy), std::size_t(sx)}) *
                       w.at({oc, ic, ky, kx});
              }
          CHECK(std::fabs(y.at({oc, oy, ox}) - acc) < 1e-10);
        }
  }

  SUBCASE("conv1d") {
    const std::size_t cin = 2, L = 9, cout = 2, kw = 5, pad = 2;
    auto x = randn_t({cin, L}, rng);
    auto w = randn_t({cout, cin, kw}, rng);
    auto y = conv1d(x, w, pad);
    REQUIRE(y.shape() == Shape{cout, L});
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t t = 0; t < L; ++t) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < cin; ++ic)
          for (std::size_t k = 0; k < kw; ++k) {
            const std::ptrdiff_t s = std::ptrdiff_t(t + k) - std::ptrdiff_t(pad);
            if (s < 0 || s >= std::ptrdiff_t(L)) continue;
            acc += x.at({ic, std::size_t(s)}) * w.at({oc, ic, k});
          }
        CHECK(std::fabs(y.at({oc, t}) - acc) < 1e-10);
      }
  }
}

TEST_CASE("shape errors name both shapes; non-finite results name the op") {
  auto a = Tensor::ones({3, 2});
  auto b = Tensor::ones({3, 2});
  try {
    matmul(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(3,2)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::ones({3}), Tensor::ones({2})), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {7}), std::invalid_argument);
  CHECK_THROWS_AS(avg_pool2(Tensor::ones({1, 3, 4})), std::invalid_argument);

  try {
    sqrt_t(Tensor::full({2}, -1.0));
    FAIL("expected throw");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sqrt") != std::string::npos);
  }
  try {
    exp_t(Tensor::full({1}, 1000.0));
    FAIL("expected throw");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  auto x = Tensor::ones({3}).set_requires_grad(true);
  {
    NoGradGuard guard;
    auto y = sum_all(mul(x, x));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->inputs.empty());
  }
  auto y = sum_all(mul(x, x));
  CHECK(y.requires_grad());
}

TEST_CASE("transposed conv equals zero-insertion then conv") {
  Rng rng(31);
  auto x = randn_t({2, 3, 3}, rng);
  auto w = randn_t({1, 2, 3, 3}, rng);
  auto up = zero_insert2(x);
  auto y1 = conv2d(up, w, 1);
  auto y2 = conv2d_transpose2x(x, w, 1);
  REQUIRE(y1.shape() == y2.shape());
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.values()[i] == y2.values()[i]);
}
