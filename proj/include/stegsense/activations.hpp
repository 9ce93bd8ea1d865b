#ifndef STEGSENSE_ACTIVATIONS_HPP_
#define STEGSENSE_ACTIVATIONS_HPP_

#include <cstddef>
#include <utility>

#include "stegsense/rng.hpp"
#include "stegsense/tensor.hpp"

namespace stegsense {

// Truncated linear unit: clamp to [-T, T]. Gradient 1 strictly inside,
// 0 at and beyond the bounds. ConfigError if T <= 0.
Tensor tlu(const Tensor& x, double threshold);

// |x| with subgradient 0 at 0.
Tensor abs_layer(const Tensor& x);

// f_ap(x) = max(x, -alpha[n,c]) for x [N,C,H,W] and alpha [N,C].
// Ties (x == -alpha) take the clamp branch, so the gradient goes to alpha.
Tensor ap_activation(const Tensor& x, const Tensor& alpha);

// Excitation parameters of one adaptive activation block with C channels:
// alpha = sigmoid(relu([gap(relu x), gap(min(x,0))] w1 + b1) w2 + b2).
struct ApamParams {
  Tensor w1;  // [2C, C]
  Tensor b1;  // [C]
  Tensor w2;  // [C, C]
  Tensor b2;  // [C]

  std::size_t channels() const { return b1.dim(0); }

  // Uniform weights in +-1/sqrt(2C), zero biases.
  static ApamParams init(std::size_t channels, Rng& rng);
  static ApamParams zeros(std::size_t channels);
};

struct ApamOutput {
  Tensor y;      // [N,C,H,W]
  Tensor alpha;  // [N,C], each in (0,1)
};

ApamOutput apam_forward(const Tensor& x, const ApamParams& params);

}  // namespace stegsense

#endif  // STEGSENSE_ACTIVATIONS_HPP_
