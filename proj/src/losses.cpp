#include "stegsense/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stegsense/errors.hpp"
#include "stegsense/ops.hpp"

namespace stegsense {

using detail::attach;
using detail::make_result;
using detail::TensorImpl;

PairingPlan make_pairs(std::size_t pairs_in_batch) {
  const std::size_t b = pairs_in_batch;
  if (b < 2) {
    throw ConfigError("make_pairs: need at least 2 cover/stego pairs per batch, got " +
                      std::to_string(b));
  }
  PairingPlan plan;
  plan.reserve(3 * b);
  for (std::size_t i = 0; i < b; ++i) plan.push_back({cover_row(i), stego_row(i), 1});
  for (std::size_t i = 0; i < b; ++i) plan.push_back({cover_row(i), cover_row((i + 1) % b), 0});
  for (std::size_t i = 0; i < b; ++i) plan.push_back({stego_row(i), stego_row((i + 1) % b), 0});
  return plan;
}

Tensor cross_entropy(const Tensor& p, const std::vector<int>& labels) {
  const std::size_t n = p.numel();
  if (n == 0 || labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " probabilities but " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto pd = p.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("cross_entropy: labels must be 0 or 1");
    const double q = std::clamp(pd[i], kProbClamp, 1.0 - kProbClamp);
    total += labels[i] == 1 ? -std::log(q) : -std::log(1.0 - q);
  }
  const double inv = 1.0 / static_cast<double>(n);
  Tensor out = make_result({1}, {total * inv});
  attach(out, "cross_entropy", {p}, [p, labels, inv](const TensorImpl& o) {
    double* gp = p.impl()->grad_buffer();
    const auto pd = p.data();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double v = pd[i];
      if (v < kProbClamp || v > 1.0 - kProbClamp) continue;
      gp[i] += o.grad[0] * inv * (labels[i] == 1 ? -1.0 / v : 1.0 / (1.0 - v));
    }
  });
  return out;
}

namespace {

// Loss and d(loss)/d(diff) scale for one pair; grad wrt f1 is scale * (f1 - f2).
struct PairTerm {
  double loss;
  double scale;
};

PairTerm pair_term(double dist_sq, int y, double margin) {
  if (y == 0) return {0.5 * dist_sq, 1.0};
  const double d = std::sqrt(dist_sq);
  const double gap = margin - d;
  if (gap <= 0.0) return {0.0, 0.0};
  // At d == 0 the direction is undefined; use the zero subgradient.
  return {0.5 * gap * gap, d > 0.0 ? -gap / d : 0.0};
}

}  // namespace

Tensor contrastive(const Tensor& f1, const Tensor& f2, int y, double margin) {
  if (f1.numel() != f2.numel()) {
    throw DimensionError("contrastive: feature sizes differ (" + std::to_string(f1.numel()) +
                         " vs " + std::to_string(f2.numel()) + ")");
  }
  if (!(margin > 0.0)) throw ConfigError("contrastive: margin must be positive");
  const std::size_t d = f1.numel();
  Tensor both = ops::concat_channels(ops::reshape(f1, {1, d}), ops::reshape(f2, {1, d}));
  Tensor rows = ops::reshape(both, {2, d});
  return contrastive_over_plan(rows, {{0, 1, y}}, margin);
}

Tensor contrastive_over_plan(const Tensor& features, const PairingPlan& plan, double margin) {
  if (features.ndim() != 2) {
    throw DimensionError("contrastive_over_plan: features must be [N,D], got " +
                         shape_str(features.shape()));
  }
  if (plan.empty()) throw ConfigError("contrastive_over_plan: empty pairing plan");
  if (!(margin > 0.0)) throw ConfigError("contrastive_over_plan: margin must be positive");
  const std::size_t n = features.dim(0), dim = features.dim(1);
  const auto f = features.data();
  std::vector<double> scales(plan.size());
  double total = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const FeaturePair& pr = plan[k];
    if (pr.a >= n || pr.b >= n) throw DimensionError("contrastive_over_plan: pair index out of range");
    if (pr.y != 0 && pr.y != 1) throw DomainError("contrastive_over_plan: y must be 0 or 1");
    double dist_sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = f[pr.a * dim + j] - f[pr.b * dim + j];
      dist_sq += diff * diff;
    }
    const PairTerm t = pair_term(dist_sq, pr.y, margin);
    total += t.loss;
    scales[k] = t.scale;
  }
  const double inv = 1.0 / static_cast<double>(plan.size());
  Tensor out = make_result({1}, {total * inv});
  attach(out, "contrastive", {features}, [features, plan, scales, dim, inv](const TensorImpl& o) {
    double* g = features.impl()->grad_buffer();
    const auto f = features.data();
    for (std::size_t k = 0; k < plan.size(); ++k) {
      const double s = scales[k] * inv * o.grad[0];
      if (s == 0.0) continue;
      const FeaturePair& pr = plan[k];
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = f[pr.a * dim + j] - f[pr.b * dim + j];
        g[pr.a * dim + j] += s * diff;
        g[pr.b * dim + j] -= s * diff;
      }
    }
  });
  return out;
}

Tensor combined_loss(const Tensor& p, const std::vector<int>& labels, const Tensor& features,
                     const PairingPlan& plan, const LossConfig& cfg) {
  if (cfg.lambda < 0.0) throw ConfigError("combined_loss: lambda must be non-negative");
  Tensor ce = cross_entropy(p, labels);
  if (cfg.lambda == 0.0) return ce;
  Tensor pair = contrastive_over_plan(features, plan, cfg.margin);
  return ops::add(ce, ops::scalar_mul(pair, cfg.lambda));
}

}  // namespace stegsense
