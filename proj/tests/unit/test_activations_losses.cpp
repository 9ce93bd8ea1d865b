#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "stegsense/activations.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/gradcheck.hpp"
#include "stegsense/losses.hpp"
#include "stegsense/ops.hpp"
#include "stegsense/rng.hpp"

using namespace stegsense;
using testing::random_tensor;
using testing::values;

TEST_CASE("tlu clamps and passes gradient only strictly inside") {
  Tensor x = Tensor::from({5}, {-5, -3, 0.5, 3, 4}, true);
  const Tensor y = tlu(x, 3.0);
  CHECK(values(y) == std::vector<double>{-3, -3, 0.5, 3, 3});
  ops::sum(y).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1, 0, 0});
  CHECK_THROWS_AS(tlu(x, 0.0), ConfigError);
}

TEST_CASE("f_ap examples and tie rule") {
  const Tensor x = Tensor::from({1, 1, 1, 3}, {2, -2, -1}, true);
  Tensor a = Tensor::from({1, 1}, {1.0}, true);
  const Tensor y = ap_activation(x, a);
  CHECK(values(y) == std::vector<double>{2, -1, -1});
  ops::sum(y).backward();
  // x = -alpha is a tie and goes to the clamp branch.
  CHECK(x.grad()[2] == 0.0);
  CHECK(a.grad()[0] == -2.0);
}

TEST_CASE("f_ap with alpha = 0 is ReLU") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x = random_tensor({2, 3, 4, 4}, s);
    CHECK(values(ap_activation(x, Tensor::zeros({2, 3}))) == values(ops::relu(x)));
  }
}

TEST_CASE("f_ap is monotone in x for fixed alpha") {
  Rng rng(2);
  const Tensor alpha = random_tensor({1, 2}, 3, 0, 1);
  const Tensor x = random_tensor({1, 2, 3, 3}, 4, -2, 2);
  Tensor bumped = x.clone();
  for (double& v : bumped.mutable_data()) v += rng.uniform(0, 0.5);
  const auto y0 = values(ap_activation(x, alpha)), y1 = values(ap_activation(bumped, alpha));
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(y1[i] >= y0[i]);
}

TEST_CASE("APAM alpha range, zero weights, positive inputs, duplicates") {
  Rng rng(5);
  const ApamParams p = ApamParams::init(4, rng);
  const Tensor x = random_tensor({3, 4, 5, 5}, 6, -4, 4);
  const ApamOutput out = apam_forward(x, p);
  REQUIRE(out.alpha.shape() == Shape{3, 4});
  for (double a : out.alpha.data()) CHECK((a > 0.0 && a < 1.0));
  double amax = 0;
  for (double a : out.alpha.data()) amax = std::max(amax, a);
  for (double v : out.y.data()) CHECK(v >= -amax);

  const ApamOutput z = apam_forward(x, ApamParams::zeros(4));
  for (double a : z.alpha.data()) CHECK(a == 0.5);

  const Tensor positive = random_tensor({2, 4, 3, 3}, 7, 0.01, 3);
  CHECK(values(apam_forward(positive, p).y) == values(positive));

  std::vector<double> dup = values(random_tensor({1, 4, 3, 3}, 8));
  dup.insert(dup.end(), dup.begin(), dup.end());
  const Tensor a = apam_forward(Tensor::from({2, 4, 3, 3}, dup), p).alpha;
  for (std::size_t c = 0; c < 4; ++c) CHECK(a.data()[c] == a.data()[4 + c]);

  CHECK_THROWS_AS(apam_forward(random_tensor({1, 3, 2, 2}, 1), p), DimensionError);
}

TEST_CASE("APAM gradients through both branches and the excitation path") {
  Rng rng(9);
  ApamParams p = ApamParams::init(3, rng);
  Tensor x = random_tensor({2, 3, 4, 4}, 10, -1, 1, true);
  const Tensor g = random_tensor({2, 3, 4, 4}, 11);
  const auto r = gradient_check([&] { return ops::sum(ops::mul(apam_forward(x, p).y, g)); },
                                {x, p.w1, p.b1, p.w2, p.b2});
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.checked > 50);
}

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy(Tensor::from({1}, {0.5}), {1}).item() == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  CHECK(cross_entropy(Tensor::from({1}, {1.0}), {1}).item() < 1e-11);
  const double expect = (-std::log(0.9) - std::log(0.8)) / 2;
  CHECK(cross_entropy(Tensor::from({2}, {0.9, 0.2}), {1, 0}).item() == doctest::Approx(expect).epsilon(1e-15));
  CHECK_THROWS_AS(cross_entropy(Tensor::from({2}, {0.9, 0.2}), {1}), DimensionError);
}

TEST_CASE("contrastive examples") {
  const Tensor f = Tensor::from({2}, {0.3, -1.2});
  CHECK(contrastive(f, f, 0, 3.0).item() == 0.0);
  Tensor a = Tensor::from({2}, {0, 0}, true), b = Tensor::from({2}, {3, 4}, true);
  const Tensor l = contrastive(a, b, 1, 3.0);
  CHECK(l.item() == 0.0);
  l.backward();
  for (double g : a.grad()) CHECK(g == 0.0);
  for (double g : b.grad()) CHECK(g == 0.0);
  CHECK(contrastive(Tensor::from({1}, {0}), Tensor::from({1}, {1}), 1, 3.0).item() == 2.0);
  // y = 0 term is 1/2 d^2
  CHECK(contrastive(Tensor::from({2}, {0, 0}), Tensor::from({2}, {3, 4}), 0, 3.0).item() == 12.5);
}

TEST_CASE("ring pairing plan") {
  const PairingPlan two = make_pairs(2);
  const PairingPlan expect = {{0, 1, 1}, {2, 3, 1}, {0, 2, 0}, {2, 0, 0}, {1, 3, 0}, {3, 1, 0}};
  CHECK(two == expect);
  const PairingPlan five = make_pairs(5);
  CHECK(five.size() == 15);
  CHECK(std::count_if(five.begin(), five.end(), [](const FeaturePair& p) { return p.y == 1; }) == 5);
  CHECK_THROWS_AS(make_pairs(1), ConfigError);
}

TEST_CASE("combined loss against a scalar recomputation") {
  const std::size_t b = 3, d = 4;
  const Tensor p = random_tensor({2 * b}, 20, 0.05, 0.95);
  const Tensor feats = random_tensor({2 * b, d}, 21, -2, 2);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  const PairingPlan plan = make_pairs(b);
  const LossConfig cfg{3.0, 0.05};

  double ce = 0;
  for (std::size_t i = 0; i < 2 * b; ++i) ce += labels[i] ? -std::log(p.data()[i]) : -std::log(1 - p.data()[i]);
  ce /= 2 * b;
  double con = 0;
  for (const auto& pr : plan) {
    double d2 = 0;
    for (std::size_t j = 0; j < d; ++j) d2 += std::pow(feats.data()[pr.a * d + j] - feats.data()[pr.b * d + j], 2);
    const double dist = std::sqrt(d2);
    con += pr.y ? 0.5 * std::pow(std::max(0.0, 3.0 - dist), 2) : 0.5 * d2;
  }
  con /= static_cast<double>(plan.size());
  CHECK(combined_loss(p, labels, feats, plan, cfg).item() == doctest::Approx(ce + 0.05 * con).epsilon(1e-13));
  CHECK(combined_loss(p, labels, feats, plan, {3.0, 0.0}).item() == cross_entropy(p, labels).item());

  // Identical features and only y = 0 pairs give a zero pair term.
  const Tensor same = Tensor::full({4, 3}, 0.7);
  CHECK(contrastive_over_plan(same, {{0, 1, 0}, {2, 3, 0}, {1, 2, 0}}, 3.0).item() == 0.0);
}

TEST_CASE("intraclass term is quadratically homogeneous") {
  const Tensor f = random_tensor({4, 5}, 30);
  const PairingPlan plan = {{0, 1, 0}, {2, 3, 0}};
  const double base = contrastive_over_plan(f, plan, 3.0).item();
  CHECK(contrastive_over_plan(ops::scalar_mul(f, 2.5), plan, 3.0).item() ==
        doctest::Approx(6.25 * base).epsilon(1e-13));
}

TEST_CASE("combined loss gradients match finite differences") {
  Tensor p = random_tensor({4}, 40, 0.1, 0.9, true);
  Tensor feats = random_tensor({4, 6}, 41, -1, 1, true);
  const PairingPlan plan = make_pairs(2);
  const double err = gradient_check([&] { return combined_loss(p, {0, 1, 0, 1}, feats, plan, {3.0, 0.05}); },
                                    {p, feats})
                         .max_rel_error;
  CHECK(err < 1e-6);
}
