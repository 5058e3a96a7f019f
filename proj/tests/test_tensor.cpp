#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "atm/tensor.hpp"

using namespace atm;

namespace {

Tensor rnd(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(std::move(shape), lo, hi, rng, grad);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// independent reference convolution, nothing shared with the library kernel
std::vector<double> conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                  int pad) {
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n * cout * ho * wo));
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b.data()[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t iy = oy * stride + ky - pad;
                int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.data()[((ni * cin + ci) * h + iy) * wd + ix] *
                       w.data()[((co * cin + ci) * kh + ky) * kw + kx];
              }
          out[static_cast<size_t>(((ni * cout + co) * ho + oy) * wo + ox)] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("elementwise ops compute and differentiate") {
  Tensor a = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
  Tensor b = Tensor::from_data({3}, {4.0, 5.0, 6.0}, true);
  Tensor s = sum_all(mul(add(a, b), sub(a, b)));
  CHECK(s.value() == doctest::Approx(1 - 16 + 4 - 25 + 9 - 36));
  backward(s);
  // d/da_i (a_i^2 - b_i^2) = 2 a_i
  CHECK(a.grad()[1] == doctest::Approx(4.0));
  CHECK(b.grad()[2] == doctest::Approx(-12.0));
}

TEST_CASE("log_op rejects non-positive input") {
  Tensor a = Tensor::from_data({2}, {1.0, 0.0});
  CHECK_THROWS_AS(log_op(a), Error);
  CHECK_NOTHROW(log_op(add_scalar(a, 1.0)));
}

TEST_CASE("shape mismatch is rejected") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), Error);
  CHECK_THROWS_AS(reshape(Tensor::zeros({4}), {5}), Error);
}

TEST_CASE("conv2d matches the loop-nest oracle") {
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 1}}) {
    Tensor x = rnd({2, 3, 7, 6}, 11);
    Tensor w = rnd({4, 3, 3, 3}, 12);
    Tensor b = rnd({4}, 13);
    Tensor y = conv2d(x, w, b, stride, pad);
    auto ref = conv2d_oracle(x, w, b, stride, pad);
    REQUIRE(static_cast<size_t>(y.size()) == ref.size());
    for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
  }
}

TEST_CASE("conv2d accepts even kernels (patch embedding)") {
  Tensor x = rnd({1, 1, 8, 8}, 21);
  Tensor w = rnd({5, 1, 4, 4}, 22);
  Tensor b = rnd({5}, 23);
  Tensor y = conv2d(x, w, b, 4, 0);
  auto ref = conv2d_oracle(x, w, b, 4, 0);
  CHECK(y.dim(2) == 2);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
}

TEST_CASE("conv2d gradients pass finite differences") {
  Tensor w = rnd({2, 2, 3, 3}, 31);
  Tensor b = rnd({2}, 32);
  Tensor x = rnd({1, 2, 5, 5}, 33);
  Tensor mix = rnd({1, 2, 5, 5}, 34, -1.0, 1.0, false);
  double ex = finite_diff_check(
      [&](const Tensor& v) { return sum_all(mul(conv2d(v, w, b, 1, 1), mix)); }, x, 1e-4);
  CHECK(ex < 1e-6);
  double ew = finite_diff_check(
      [&](const Tensor& v) { return sum_all(mul(conv2d(x, v, b, 1, 1), mix)); }, w, 1e-4);
  CHECK(ew < 1e-6);
  double eb = finite_diff_check(
      [&](const Tensor& v) { return sum_all(mul(conv2d(x, w, v, 1, 1), mix)); }, b, 1e-4);
  CHECK(eb < 1e-6);
}

TEST_CASE("avg_pool2 then upsample2 preserves the spatial mean") {
  Tensor x = rnd({3, 4, 6, 8}, 41, 0.0, 1.0, false);
  Tensor y = upsample2(avg_pool2(x));
  REQUIRE(y.shape() == x.shape());
  int64_t hw = 6 * 8;
  for (int64_t n = 0; n < 12; ++n) {
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      mx += x.data()[n * hw + i];
      my += y.data()[n * hw + i];
    }
    CHECK(std::abs(mx - my) / hw < 1e-12);
  }
}

TEST_CASE("avg_pool2 small-case oracle") {
  Tensor x = Tensor::from_data({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor y = avg_pool2(x);
  CHECK(y.data()[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(y.data()[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  CHECK_THROWS_AS(avg_pool2(Tensor::zeros({1, 1, 3, 4})), Error);
}

TEST_CASE("upsample2 interpolates with half-pixel centers") {
  // single row 1x1x1x2: sources at output centers 0.5 and 2.5 (scale 2)
  Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.0, 4.0});
  Tensor y = upsample2(x);
  REQUIRE(y.dim(3) == 4);
  // output sample o maps to source (o + 0.5)/2 - 0.5 -> {-0.25, 0.25, 0.75, 1.25}, edge clamped
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(1.0));
  CHECK(y.data()[2] == doctest::Approx(3.0));
  CHECK(y.data()[3] == doctest::Approx(4.0));
}

TEST_CASE("mean_mid_canonical is exactly permutation invariant") {
  std::mt19937_64 rng(51);
  Tensor x = Tensor::uniform({2, 5, 3}, -1.0, 1.0, rng);
  Tensor m = mean_mid_canonical(x, 2, 5, 3);
  // permute the middle slices and compare bitwise
  std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<double> pd(static_cast<size_t>(x.size()));
  for (int64_t o = 0; o < 2; ++o)
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t k = 0; k < 3; ++k)
        pd[static_cast<size_t>((o * 5 + i) * 3 + k)] =
            x.data()[(o * 5 + perm[static_cast<size_t>(i)]) * 3 + k];
  Tensor mp = mean_mid_canonical(Tensor::from_data({2, 5, 3}, std::move(pd)), 2, 5, 3);
  for (int64_t i = 0; i < m.size(); ++i) CHECK(m.data()[i] == mp.data()[i]);
}

TEST_CASE("mean_mid_canonical gradient is uniform") {
  Tensor x = rnd({1, 4, 2}, 52);
  Tensor m = mean_mid_canonical(x, 1, 4, 2);
  backward(sum_all(m));
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("min_all and sub_bcast differentiate") {
  Tensor x = Tensor::from_data({4}, {3.0, -1.0, 2.0, -1.0}, true);
  Tensor m = min_all(x);
  CHECK(m.value() == -1.0);
  Tensor y = sub_bcast(x, m);
  CHECK(y.data()[0] == 4.0);
  backward(sum_all(mul(y, y)));
  // subgradient of the min goes to the first argmin only
  CHECK(x.has_grad());
  double e = finite_diff_check(
      [&](const Tensor& v) { return sum_all(mul(sub_bcast(v, min_all(v)), sub_bcast(v, min_all(v)))); },
      rnd({5}, 53), 1e-5);
  CHECK(e < 1e-6);
}

TEST_CASE("concat and stack0 lay out as expected") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({1, 2}, {3, 4});
  Tensor c = concat({a, b}, 1);
  REQUIRE(c.shape() == Shape{1, 4});
  CHECK(c.data()[2] == 3);
  Tensor s = stack0({a, b});
  REQUIRE(s.shape() == Shape{2, 1, 2});
  CHECK(s.data()[3] == 4);
}

TEST_CASE("narrow selects a contiguous range") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor n = narrow(a, 1, 1, 2);
  REQUIRE(n.shape() == Shape{2, 2});
  CHECK(n.data()[0] == 2);
  CHECK(n.data()[3] == 6);
}

TEST_CASE("softmax, layer_norm and cross_entropy oracles") {
  Tensor logits = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0}, true);
  Tensor p = softmax_rows(logits);
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p.data()[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(p.data()[2] == doctest::Approx(std::exp(3.0) / z));

  Tensor g = Tensor::full({3}, 1.0, true);
  Tensor be = Tensor::zeros({3}, true);
  Tensor ln = layer_norm(Tensor::from_data({1, 3}, {1.0, 2.0, 3.0}), g, be, 1e-5);
  double var = 2.0 / 3.0;
  CHECK(ln.data()[0] == doctest::Approx(-1.0 / std::sqrt(var + 1e-5)));
  CHECK(ln.data()[1] == doctest::Approx(0.0));

  Tensor ce = cross_entropy(logits, {2});
  CHECK(ce.value() == doctest::Approx(-std::log(std::exp(3.0) / z)));
  backward(ce);
  CHECK(logits.grad()[2] == doctest::Approx(std::exp(3.0) / z - 1.0));
}

TEST_CASE("matmul / linear / transpose oracles") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor m = matmul(a, b);
  CHECK(m.data()[0] == 58);
  CHECK(m.data()[3] == 154);
  Tensor t = transpose2(a);
  REQUIRE(t.shape() == Shape{3, 2});
  CHECK(t.data()[1] == 4);
  Tensor w = Tensor::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor bias = Tensor::from_data({2}, {0.5, -0.5});
  Tensor y = linear(a, w, bias);
  CHECK(y.data()[0] == doctest::Approx(1.5));
  CHECK(y.data()[1] == doctest::Approx(1.5));
}

TEST_CASE("backward accumulates through shared subgraphs") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tensor y = mul(x, x);  // x^2
  Tensor z = add(y, y);  // 2 x^2
  backward(sum_all(z));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  // deliberately broken op: forward x^2, backward claims d/dx = x
  auto bad_square = [](const Tensor& a) {
    std::vector<double> d(static_cast<size_t>(a.size()));
    for (int64_t i = 0; i < a.size(); ++i) d[static_cast<size_t>(i)] = a.data()[i] * a.data()[i];
    return make_node(a.shape(), std::move(d), {a}, [](detail::Node& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += nd.grad[i] * p->data[i];
    });
  };
  double err = finite_diff_check([&](const Tensor& v) { return sum_all(bad_square(v)); },
                                 rnd({4}, 61, 0.5, 1.5), 1e-4);
  CHECK(err > 1e-2);
}
