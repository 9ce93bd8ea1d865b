#ifndef STEGSENSE_OPS_HPP_
#define STEGSENSE_OPS_HPP_

#include <cstddef>

#include "stegsense/tensor.hpp"

// Differentiable operations over Tensor. Every op records a graph node when
// any input requires a gradient (and grad mode is on).
//
// Reduction order is fixed and documented per op: results are bit-identical
// run to run, and conv2d matches a plain nested-loop cross-correlation that
// accumulates over (in_channel, kernel_row, kernel_col) in that order.
namespace stegsense::ops {

// Worker threads for conv2d (default 1). Work is split only across
// independent output planes, so results do not depend on this setting.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Cross-correlation (no kernel flip), zero padding.
// input [N,Cin,H,W], kernel [Cout,Cin,kH,kW] -> [N,Cout,H',W'],
// H' = (H + 2*padding - kH) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Mirror padding of the two spatial axes (edge sample not repeated):
// [N,C,H,W] -> [N,C,H+2p,W+2p]. Needs H,W > p.
Tensor reflect_pad2d(const Tensor& input, std::size_t pad);

// input [N,D] x weight [D,K] + bias [K] -> [N,K]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& input);

// [N,C1] ++ [N,C2] -> [N,C1+C2]
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Average pooling over window x window, zero padding counted in the divisor.
Tensor avg_pool2d(const Tensor& input, std::size_t window, std::size_t stride, std::size_t padding);

// Per-channel batch normalisation of [N,C,H,W]. In training mode batch
// statistics are used and the running buffers are updated in place
// (running = (1-momentum)*running + momentum*batch, unbiased variance).
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps);

// Elementwise. Binary ops accept equal shapes, or a one-element operand that
// is broadcast. Kink subgradients are 0 (relu at 0, abs at 0, sqrt at 0).
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor min_with_zero(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // DomainError on negative input
Tensor scalar_mul(const Tensor& x, double c);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Sum / mean of all elements in row-major order -> shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Same data, new shape (element count must match).
Tensor reshape(const Tensor& x, const Shape& shape);

}  // namespace stegsense::ops

#endif  // STEGSENSE_OPS_HPP_
