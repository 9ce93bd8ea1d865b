#include "stegsense/activations.hpp"

#include <cmath>

#include "stegsense/errors.hpp"
#include "stegsense/ops.hpp"

namespace stegsense {

using detail::attach;
using detail::make_result;
using detail::TensorImpl;

Tensor tlu(const Tensor& x, double threshold) {
  if (!(threshold > 0.0)) {
    throw ConfigError("tlu: threshold must be positive, got " + std::to_string(threshold));
  }
  const double t = threshold;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xd[i], -t), t);
  Tensor y = make_result(x.shape(), std::move(out));
  attach(y, "tlu", {x}, [x, t](const TensorImpl& o) {
    double* gx = x.impl()->grad_buffer();
    const auto xd = x.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xd[i] > -t && xd[i] < t) gx[i] += o.grad[i];
    }
  });
  return y;
}

Tensor abs_layer(const Tensor& x) { return ops::abs(x); }

Tensor ap_activation(const Tensor& x, const Tensor& alpha) {
  if (x.ndim() != 4 || alpha.ndim() != 2 || alpha.dim(0) != x.dim(0) || alpha.dim(1) != x.dim(1)) {
    throw DimensionError("ap_activation: x " + shape_str(x.shape()) + " and alpha " +
                         shape_str(alpha.shape()) + " disagree on axes 0,1");
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  const auto ad = alpha.data();
  std::vector<double> out(x.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const double floor = -ad[p];
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = xd[p * hw + i];
      out[p * hw + i] = v > floor ? v : floor;
    }
  }
  Tensor y = make_result(x.shape(), std::move(out));
  attach(y, "ap_activation", {x, alpha}, [x, alpha, planes, hw](const TensorImpl& o) {
    const auto xd = x.data();
    const auto ad = alpha.data();
    double* gx = x.requires_grad() ? x.impl()->grad_buffer() : nullptr;
    double* ga = alpha.requires_grad() ? alpha.impl()->grad_buffer() : nullptr;
    for (std::size_t p = 0; p < planes; ++p) {
      const double floor = -ad[p];
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double g = o.grad[p * hw + i];
        if (xd[p * hw + i] > floor) {
          if (gx) gx[p * hw + i] += g;
        } else {
          acc -= g;
        }
      }
      if (ga) ga[p] += acc;
    }
  });
  return y;
}

ApamParams ApamParams::init(std::size_t channels, Rng& rng) {
  const double bound = 1.0 / std::sqrt(2.0 * static_cast<double>(channels));
  auto uniform = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& e : v) e = rng.uniform(-bound, bound);
    return Tensor::from(shape, std::move(v), true);
  };
  ApamParams p;
  p.w1 = uniform({2 * channels, channels});
  p.b1 = Tensor::zeros({channels}, true);
  p.w2 = uniform({channels, channels});
  p.b2 = Tensor::zeros({channels}, true);
  return p;
}

ApamParams ApamParams::zeros(std::size_t channels) {
  ApamParams p;
  p.w1 = Tensor::zeros({2 * channels, channels}, true);
  p.b1 = Tensor::zeros({channels}, true);
  p.w2 = Tensor::zeros({channels, channels}, true);
  p.b2 = Tensor::zeros({channels}, true);
  return p;
}

ApamOutput apam_forward(const Tensor& x, const ApamParams& params) {
  if (x.ndim() != 4 || x.dim(1) != params.channels()) {
    throw DimensionError("apam_forward: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(params.channels()) + " channels on axis 1");
  }
  const Tensor pos = ops::global_avg_pool(ops::relu(x));
  const Tensor neg = ops::global_avg_pool(ops::min_with_zero(x));
  const Tensor squeezed = ops::concat_channels(pos, neg);
  const Tensor hidden = ops::relu(ops::linear(squeezed, params.w1, params.b1));
  Tensor alpha = ops::sigmoid(ops::linear(hidden, params.w2, params.b2));
  Tensor y = ap_activation(x, alpha);
  return {std::move(y), std::move(alpha)};
}

}  // namespace stegsense
