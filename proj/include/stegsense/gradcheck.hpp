#ifndef STEGSENSE_GRADCHECK_HPP_
#define STEGSENSE_GRADCHECK_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include "stegsense/tensor.hpp"

namespace stegsense {

struct GradCheckOptions {
  double h = 1e-5;
  // Skip component i when |x_i| < 10*h (the argument sits on a kink of
  // relu/abs-style ops).
  bool skip_near_zero = true;
  // Also skip components whose one-sided difference quotients disagree, or
  // whose central difference moves when the step is halved: the step
  // straddles a kink somewhere inside the composite.
  bool skip_straddled_kinks = false;
  double straddle_tolerance = 1e-4;
  // Check at most this many components per tensor (0 = all), chosen by seed.
  std::size_t max_components = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Compares reverse-mode gradients of scalar `f` against central differences.
// Relative error per component: |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
//
// `f` is re-evaluated with the entries of `inputs` perturbed in place; the
// inputs must be leaves that `f` reads.
GradCheckReport gradient_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                               const GradCheckOptions& options = {});

// Single-input form: returns the max relative error of f at x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5);

}  // namespace stegsense

#endif  // STEGSENSE_GRADCHECK_HPP_
