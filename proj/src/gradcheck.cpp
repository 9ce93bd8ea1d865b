#include "stegsense/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stegsense/errors.hpp"
#include "stegsense/rng.hpp"

namespace stegsense {

GradCheckReport gradient_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                               const GradCheckOptions& options) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = f();
  if (loss.numel() != 1) throw UsageError("gradient_check: f must return a scalar");
  std::vector<std::vector<double>> analytic(inputs.size());
  if (loss.requires_grad()) {
    loss.backward();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto g = inputs[k].grad();
      analytic[k].assign(inputs[k].numel(), 0.0);
      std::copy(g.begin(), g.end(), analytic[k].begin());
    }
  } else {
    for (std::size_t k = 0; k < inputs.size(); ++k) analytic[k].assign(inputs[k].numel(), 0.0);
  }
  const double f0 = loss.item();

  auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };

  GradCheckReport report;
  Rng rng(options.seed);
  const double h = options.h;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> idx(inputs[k].numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_components != 0 && idx.size() > options.max_components) {
      rng.shuffle(idx);
      idx.resize(options.max_components);
      std::sort(idx.begin(), idx.end());
    }
    auto values = inputs[k].mutable_data();
    for (std::size_t i : idx) {
      const double x0 = values[i];
      if (options.skip_near_zero && std::fabs(x0) < 10.0 * h) {
        ++report.skipped;
        continue;
      }
      values[i] = x0 + h;
      const double fp = eval();
      values[i] = x0 - h;
      const double fm = eval();
      values[i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      if (options.skip_straddled_kinks) {
        const double right = (fp - f0) / h;
        const double left = (f0 - fm) / h;
        const double scale = std::max(std::fabs(right) + std::fabs(left), 1e-12);
        if (std::fabs(right - left) > options.straddle_tolerance * scale &&
            std::fabs(right - left) > 1e-7) {
          ++report.skipped;
          continue;
        }
        // Kinks on both sides can leave the one-sided quotients in agreement;
        // a half step then changes the central difference by far more than
        // the O(h^2) a smooth function allows.
        values[i] = x0 + 0.5 * h;
        const double hp = eval();
        values[i] = x0 - 0.5 * h;
        const double hm = eval();
        values[i] = x0;
        const double fd_half = (hp - hm) / h;
        if (std::fabs(fd - fd_half) > options.straddle_tolerance * std::max(std::fabs(fd), 1e-12) &&
            std::fabs(fd - fd_half) > 1e-7) {
          ++report.skipped;
          continue;
        }
      }
      const double ad = analytic[k][i];
      const double rel = std::fabs(ad - fd) / std::max(1e-12, std::fabs(ad) + std::fabs(fd));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
    }
  }
  return report;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h) {
  Tensor leaf = x;
  GradCheckOptions options;
  options.h = h;
  return gradient_check([&] { return f(leaf); }, {leaf}, options).max_rel_error;
}

}  // namespace stegsense
