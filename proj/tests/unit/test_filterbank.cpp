#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/filterbank.hpp"
#include "stegsense/gradcheck.hpp"
#include "stegsense/ops.hpp"
#include "stegsense/rng.hpp"

using namespace stegsense;

namespace {

double off_center_sum(std::span<const double> w) {
  double s = 0.0;
  for (std::size_t i = 0; i < kKernelCells; ++i)
    if (i != kCenterIndex) s += w[i];
  return s;
}

void require_invariants(const FilterBank& bank, double tol) {
  const auto d = bank.kernels.data();
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    const auto w = d.subspan(k * kKernelCells, kKernelCells);
    REQUIRE(w[kCenterIndex] == -1.0);
    REQUIRE(std::fabs(off_center_sum(w) - 1.0) < tol);
    if (bank.mode != ConstraintMode::kNone) {
      for (std::size_t i = 0; i < kKernelCells; ++i)
        if (!bank.masks[k][i]) REQUIRE(w[i] == 0.0);
    }
  }
}

}  // namespace

TEST_CASE("seed bank has the expected class counts and integer weights") {
  const SeedBank& s = seed_bank();
  std::map<FilterClass, int> count;
  for (auto c : s.classes) ++count[c];
  CHECK(count[FilterClass::kFirstOrder] == 8);
  CHECK(count[FilterClass::kSecondOrder] == 4);
  CHECK(count[FilterClass::kThirdOrder] == 8);
  CHECK(count[FilterClass::kSquare3] == 1);
  CHECK(count[FilterClass::kEdge3] == 4);
  CHECK(count[FilterClass::kSquare5] == 1);
  CHECK(count[FilterClass::kEdge5] == 4);
  for (std::size_t k = 0; k < kNumFilters; ++k) {
    double total = 0.0;
    for (double v : s.kernels[k]) {
      CHECK(v == std::round(v));
      total += v;
    }
    // Every high-pass seed annihilates constants.
    CHECK(total == 0.0);
    CHECK(s.kernels[k][kCenterIndex] < 0.0);
  }
}

TEST_CASE("masks hold the seed support plus the center") {
  const auto masks = derive_masks(seed_bank());
  // first order: neighbour + center
  int ones = 0;
  for (auto m : masks[0]) ones += m;
  CHECK(ones == 2);
  ones = 0;
  for (auto m : masks[29]) ones += m;
  CHECK(ones == 25);
}

TEST_CASE("normalised seed of a first-order filter") {
  const Kernel5 w = normalized_seed(seed_bank(), 0);
  CHECK(w[kCenterIndex] == -1.0);
  CHECK(w[7] == 1.0);  // up neighbour
  // third order: (-1, 3, 1) off-center sums to 3
  const Kernel5 t = normalized_seed(seed_bank(), 12);
  CHECK(off_center_sum(t) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t[7] == doctest::Approx(1.0));
  CHECK(t[2] == doctest::Approx(-1.0 / 3.0));
}

TEST_CASE("projection invariants hold after random perturbations") {
  for (auto mode : {ConstraintMode::kSupport, ConstraintMode::kDirection, ConstraintMode::kNone}) {
    FilterBank bank = FilterBank::initial(mode);
    require_invariants(bank, 1e-12);
    Rng rng(3);
    for (int step = 0; step < 200; ++step) {
      for (double& v : bank.kernels.mutable_data()) v += rng.uniform(-0.05, 0.05);
      bank.project();
      require_invariants(bank, 1e-9);
    }
  }
}

TEST_CASE("projection is idempotent bit for bit") {
  FilterBank bank = FilterBank::initial();
  Rng rng(8);
  for (int step = 0; step < 50; ++step) {
    for (double& v : bank.kernels.mutable_data()) v += rng.uniform(-0.1, 0.1);
    bank.project();
    const auto once = testing::values(bank.kernels);
    bank.project();
    REQUIRE(testing::values(bank.kernels) == once);
  }
}

TEST_CASE("degenerate sums reset to the normalised seed") {
  FilterBank bank = FilterBank::initial();
  auto d = bank.kernels.mutable_data();
  // Filter 12: zero the off-center sum exactly.
  for (std::size_t i = 0; i < kKernelCells; ++i) d[12 * kKernelCells + i] = 0.0;
  d[12 * kKernelCells + 7] = 0.5;
  d[12 * kKernelCells + 17] = -0.5;
  CHECK(bank.project() == 1);
  CHECK(bank.degenerate_resets == 1);
  const Kernel5 expect = normalized_seed(seed_bank(), 12);
  for (std::size_t i = 0; i < kKernelCells; ++i) CHECK(d[12 * kKernelCells + i] == expect[i]);
}

TEST_CASE("direction mode zeroes sign flips and treats negative sums as degenerate") {
  const SeedBank& s = seed_bank();
  const auto masks = derive_masks(s);
  const std::size_t k = 12;  // third order, mixed signs
  Kernel5 w = normalized_seed(s, k);
  w[2] = 0.4;  // seed has -1 here
  CHECK_FALSE(project_kernel(w, masks[k], s.kernels[k], normalized_seed(s, k), ConstraintMode::kDirection));
  CHECK(w[2] == 0.0);
  CHECK(off_center_sum(w) == doctest::Approx(1.0));

  Kernel5 neg{};
  neg[7] = -2.0;  // seed sign is + here, so it is zeroed and the sum becomes 0
  CHECK(project_kernel(neg, masks[0], s.kernels[0], normalized_seed(s, 0), ConstraintMode::kDirection));
}

TEST_CASE("unconstrained mode keeps cells outside the support") {
  FilterBank bank = FilterBank::initial(ConstraintMode::kNone);
  bank.kernels.mutable_data()[0] = 0.25;  // outside the first filter's support
  bank.project();
  CHECK(bank.kernels.data()[0] != 0.0);
}

TEST_CASE("residuals vanish on constant images and follow ramps") {
  const FilterBank bank = FilterBank::initial();
  for (double level : {0.0, 17.0, 128.0, 255.0}) {
    const Tensor img = Tensor::full({1, 1, 12, 12}, level);
    const Tensor r = compute_residuals(img, bank);
    REQUIRE(r.shape() == Shape{1, 30, 12, 12});
    for (double v : r.data()) REQUIRE(std::fabs(v) < 1e-9);
  }
  // Horizontal ramp: the right-neighbour first-order filter gives +1 inside.
  std::vector<double> ramp(12 * 12);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 12; ++x) ramp[y * 12 + x] = static_cast<double>(x);
  const Tensor r = compute_residuals(Tensor::from({1, 1, 12, 12}, ramp), bank);
  for (std::size_t y = 2; y < 10; ++y)
    for (std::size_t x = 2; x < 10; ++x) {
      CHECK(r.data()[2 * 144 + y * 12 + x] == doctest::Approx(1.0));
      // horizontal second order (0.5, -1, 0.5) annihilates the ramp
      CHECK(std::fabs(r.data()[10 * 144 + y * 12 + x]) < 1e-12);
    }
}

TEST_CASE("residuals are differentiable in the kernels") {
  FilterBank bank = FilterBank::initial();
  Tensor img = testing::random_tensor({1, 1, 8, 8}, 4, 0, 255);
  const double err = gradient_check(
                         [&] { return ops::mean(ops::square(compute_residuals(img, bank))); }, {bank.kernels})
                         .max_rel_error;
  CHECK(err < 1e-6);
}

TEST_CASE("filter export lists every kernel") {
  std::ostringstream os;
  write_filters(os, FilterBank::initial());
  const std::string s = os.str();
  CHECK(s.rfind("# filter 0 class first_order\n", 0) == 0);
  CHECK(s.find("# filter 29 class square5") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 30 * 6);
}

TEST_CASE("constraint mode names") {
  CHECK(parse_constraint_mode("ours") == ConstraintMode::kSupport);
  CHECK(parse_constraint_mode("none") == ConstraintMode::kNone);
  CHECK_THROWS_AS(parse_constraint_mode("srm"), ConfigError);
}
