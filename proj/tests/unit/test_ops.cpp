#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/gradcheck.hpp"
#include "stegsense/ops.hpp"

using namespace stegsense;
using testing::random_tensor;

namespace {

// Plain cross-correlation, accumulating over (ci, kh, kw).
std::vector<double> ref_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * ho * wo);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo) {
          double acc = 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s) {
                const long iy = static_cast<long>(y * stride + r) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + s) - static_cast<long>(pad);
                double v = 0.0;
                if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w)) {
                  v = x.data()[((b * ci + c) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                }
                acc += k.data()[((o * ci + c) * kh + r) * kw + s] * v;
              }
          out[((b * co + o) * ho + y) * wo + xo] = acc;
        }
  return out;
}

// Scatter-form gradients of sum(conv * g) for comparison within rounding.
void ref_conv_grads(const Tensor& x, const Tensor& k, const std::vector<double>& g, std::size_t stride,
                    std::size_t pad, std::vector<double>& dx, std::vector<double>& dk) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  dx.assign(x.numel(), 0.0);
  dk.assign(k.numel(), 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xo = 0; xo < wo; ++xo) {
          const double go = g[((b * co + o) * ho + y) * wo + xo];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t r = 0; r < kh; ++r)
              for (std::size_t s = 0; s < kw; ++s) {
                const long iy = static_cast<long>(y * stride + r) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * stride + s) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                const std::size_t xi = ((b * ci + c) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                const std::size_t ki = ((o * ci + c) * kh + r) * kw + s;
                dx[xi] += k.data()[ki] * go;
                dk[ki] += x.data()[xi] * go;
              }
        }
}

double max_rel(const std::vector<double>& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]) / std::max(1e-12, std::fabs(a[i]) + std::fabs(b[i])));
  }
  return m;
}

// Weighted sum so every output element gets a distinct gradient.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, random_tensor(y.shape(), seed)));
}

double check(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  return gradient_check(f, std::move(inputs)).max_rel_error;
}

struct ConvCase {
  std::size_t n, ci, h, w, co, k, stride, pad;
};

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle bit for bit") {
  const ConvCase cases[] = {
      {2, 3, 9, 13, 5, 3, 1, 1},   {1, 1, 16, 16, 30, 5, 1, 2}, {2, 4, 11, 8, 6, 3, 1, 0},
      {3, 2, 7, 21, 9, 5, 1, 2},   {1, 2, 9, 9, 3, 1, 1, 0},    {2, 3, 10, 12, 4, 3, 2, 1},
      {1, 2, 12, 12, 2, 7, 1, 3},  {2, 5, 8, 17, 7, 3, 1, 1},
  };
  std::uint64_t seed = 1;
  for (const auto& c : cases) {
    const Tensor x = random_tensor({c.n, c.ci, c.h, c.w}, seed++, -3, 3);
    const Tensor k = random_tensor({c.co, c.ci, c.k, c.k}, seed++);
    const Tensor y = ops::conv2d(x, k, c.stride, c.pad);
    const auto ref = ref_conv(x, k, c.stride, c.pad);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(y.data()[i] == ref[i]);
  }
}

TEST_CASE("conv2d gradients agree with the scatter oracle") {
  const ConvCase cases[] = {
      {2, 3, 9, 13, 5, 3, 1, 1}, {2, 1, 12, 10, 4, 5, 1, 2}, {2, 3, 10, 12, 4, 3, 2, 1}, {1, 6, 5, 19, 5, 3, 1, 1}};
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    Tensor x = random_tensor({c.n, c.ci, c.h, c.w}, seed++, -1, 1, true);
    Tensor k = random_tensor({c.co, c.ci, c.k, c.k}, seed++, -1, 1, true);
    const Tensor y = ops::conv2d(x, k, c.stride, c.pad);
    const Tensor g = random_tensor(y.shape(), seed++);
    ops::sum(ops::mul(y, g)).backward();
    std::vector<double> dx, dk;
    ref_conv_grads(x, k, testing::values(g), c.stride, c.pad, dx, dk);
    CHECK(max_rel(dx, x.grad()) < 1e-12);
    CHECK(max_rel(dk, k.grad()) < 1e-12);
  }
}

TEST_CASE("conv2d results do not depend on the thread count") {
  Tensor x = random_tensor({3, 6, 20, 18}, 5, -1, 1, true);
  Tensor k = random_tensor({10, 6, 3, 3}, 6, -1, 1, true);
  auto run = [&](std::size_t threads) {
    ops::set_num_threads(threads);
    x.zero_grad();
    k.zero_grad();
    const Tensor y = ops::conv2d(x, k, 1, 1);
    weighted(y, 7).backward();
    std::vector<double> all = testing::values(y);
    all.insert(all.end(), x.grad().begin(), x.grad().end());
    all.insert(all.end(), k.grad().begin(), k.grad().end());
    return all;
  };
  const auto one = run(1);
  const auto three = run(3);
  ops::set_num_threads(1);
  CHECK(one == three);
}

TEST_CASE("conv2d rejects bad shapes with the offending axis") {
  const Tensor x = random_tensor({1, 3, 8, 8}, 1);
  CHECK_THROWS_AS(ops::conv2d(x, random_tensor({2, 3, 2, 2}, 2), 1, 0), DimensionError);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, random_tensor({2, 4, 3, 3}, 2), 1, 1), doctest::Contains("axis 1"),
                       DimensionError);
  CHECK_THROWS_AS(ops::conv2d(random_tensor({3, 8, 8}, 1), random_tensor({2, 3, 3, 3}, 2), 1, 1), DimensionError);
}

TEST_CASE("reflect_pad2d mirrors without repeating the edge") {
  const Tensor x = Tensor::from({1, 1, 1, 3}, {1, 2, 3});
  CHECK_THROWS_AS(ops::reflect_pad2d(x, 1), DimensionError);  // height 1 cannot mirror
  const Tensor r = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor p = ops::reflect_pad2d(r, 1);
  const std::vector<double> expect = {5, 4, 5, 6, 5, 2, 1, 2, 3, 2, 5, 4, 5, 6, 5, 8, 7, 8, 9, 8, 5, 4, 5, 6, 5};
  CHECK(testing::values(p) == expect);
}

TEST_CASE("avg_pool2d counts padding in the divisor") {
  const Tensor x = Tensor::from({1, 1, 2, 2}, {4, 8, 12, 16});
  const Tensor y = ops::avg_pool2d(x, 3, 2, 1);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(40.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("batch_norm normalises per channel and tracks running statistics") {
  const Tensor x = random_tensor({4, 3, 5, 5}, 9, 2, 6);
  const Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
  const Tensor y = ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0, xs = 0, xs2 = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y.data()[(n * 3 + c) * 25 + i], xv = x.data()[(n * 3 + c) * 25 + i];
        s += v;
        s2 += v * v;
        xs += xv;
        xs2 += xv * xv;
      }
    CHECK(std::fabs(s / 100) < 1e-12);
    CHECK(s2 / 100 == doctest::Approx(1.0).epsilon(1e-3));
    const double mean = xs / 100, var_unbiased = (xs2 - 100 * mean * mean) / 99;
    CHECK(rm.data()[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rv.data()[c] == doctest::Approx(0.9 + 0.1 * var_unbiased).epsilon(1e-10));
  }
  // Eval mode uses the buffers.
  const Tensor e = ops::batch_norm(x, gamma, beta, rm, rv, false, 0.1, 1e-5);
  CHECK(e.data()[0] == doctest::Approx((x.data()[0] - rm.data()[0]) / std::sqrt(rv.data()[0] + 1e-5)));
}

TEST_CASE("elementwise ops and domain errors") {
  CHECK_THROWS_AS(ops::sqrt(Tensor::from({2}, {1.0, -1.0})), DomainError);
  CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  const Tensor s = ops::sigmoid(Tensor::from({3}, {-800.0, 0.0, 800.0}));
  // Saturated values stay inside the open interval.
  CHECK(s.data()[0] > 0.0);
  CHECK(s.data()[1] == 0.5);
  CHECK(s.data()[2] < 1.0);
  CHECK(s.data()[2] > 1.0 - 1e-15);
  CHECK(std::isfinite(s.data()[0]));
  const Tensor m = ops::add(Tensor::from({3}, {1, 2, 3}), Tensor::scalar(10));
  CHECK(testing::values(m) == std::vector<double>{11, 12, 13});
}

TEST_CASE("finite-difference check of every op") {
  const double tol = 1e-6;
  Tensor a = random_tensor({2, 3, 4, 5}, 11, -1, 1, true);
  Tensor b = random_tensor({2, 3, 4, 5}, 12, -1, 1, true);
  Tensor pos = random_tensor({2, 3, 4, 5}, 13, 0.5, 2, true);
  Tensor s = random_tensor({1}, 14, 0.5, 1.5, true);

  CHECK(check([&] { return weighted(ops::relu(a), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::abs(a), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::sigmoid(a), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::min_with_zero(a), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::square(a), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::sqrt(pos), 1); }, {pos}) < tol);
  CHECK(check([&] { return weighted(ops::scalar_mul(a, -2.5), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::add(a, b), 1); }, {a, b}) < tol);
  CHECK(check([&] { return weighted(ops::sub(a, b), 1); }, {a, b}) < tol);
  CHECK(check([&] { return weighted(ops::mul(a, b), 1); }, {a, b}) < tol);
  CHECK(check([&] { return weighted(ops::mul(a, s), 1); }, {a, s}) < tol);
  CHECK(check([&] { return weighted(ops::add(s, a), 1); }, {a, s}) < tol);
  CHECK(check([&] { return ops::mean(ops::square(a)); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::reshape(a, {6, 20}), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::global_avg_pool(ops::square(a)), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::avg_pool2d(ops::square(a), 3, 2, 1), 1); }, {a}) < tol);
  CHECK(check([&] { return weighted(ops::reflect_pad2d(ops::square(a), 2), 1); }, {a}) < tol);

  Tensor f1 = random_tensor({3, 4}, 15, -1, 1, true), f2 = random_tensor({3, 2}, 16, -1, 1, true);
  CHECK(check([&] { return weighted(ops::concat_channels(ops::square(f1), f2), 1); }, {f1, f2}) < tol);

  Tensor xin = random_tensor({4, 6}, 17, -1, 1, true), wt = random_tensor({6, 3}, 18, -1, 1, true),
         bias = random_tensor({3}, 19, -1, 1, true);
  CHECK(check([&] { return weighted(ops::linear(xin, wt, bias), 1); }, {xin, wt, bias}) < tol);

  Tensor gamma = random_tensor({3}, 20, 0.5, 1.5, true), beta = random_tensor({3}, 21, -1, 1, true);
  CHECK(check(
            [&] {
              Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
              return weighted(ops::batch_norm(a, gamma, beta, rm, rv, true, 0.1, 1e-5), 2);
            },
            {a, gamma, beta}) < tol);
  CHECK(check(
            [&] {
              Tensor rm = Tensor::full({3}, 0.2), rv = Tensor::full({3}, 0.7);
              return weighted(ops::batch_norm(a, gamma, beta, rm, rv, false, 0.1, 1e-5), 2);
            },
            {a, gamma, beta}) < tol);

  Tensor x = random_tensor({2, 3, 9, 11}, 22, -1, 1, true);
  Tensor k3 = random_tensor({4, 3, 3, 3}, 23, -1, 1, true);
  Tensor k5 = random_tensor({2, 3, 5, 5}, 24, -1, 1, true);
  CHECK(check([&] { return weighted(ops::square(ops::conv2d(x, k3, 1, 1)), 3); }, {x, k3}) < tol);
  CHECK(check([&] { return weighted(ops::square(ops::conv2d(x, k5, 1, 2)), 3); }, {x, k5}) < tol);
  CHECK(check([&] { return weighted(ops::square(ops::conv2d(x, k3, 2, 0)), 3); }, {x, k3}) < tol);
}
