#ifndef STEGSENSE_LOSSES_HPP_
#define STEGSENSE_LOSSES_HPP_

#include <cstddef>
#include <vector>

#include "stegsense/tensor.hpp"

namespace stegsense {

inline constexpr double kProbClamp = 1e-12;

struct LossConfig {
  double margin = 3.0;   // m
  double lambda = 0.05;  // weight of the pair term
};

// One feature pair: y = 1 joins a cover and a stego, y = 0 two same-class items.
struct FeaturePair {
  std::size_t a;
  std::size_t b;
  int y;
  bool operator==(const FeaturePair&) const = default;
};

using PairingPlan = std::vector<FeaturePair>;

// Batch layout used throughout: cover i at row 2i, its stego at row 2i+1.
constexpr std::size_t cover_row(std::size_t i) { return 2 * i; }
constexpr std::size_t stego_row(std::size_t i) { return 2 * i + 1; }

// Ring pairing over B >= 2 cover/stego pairs: B interclass pairs
// (c_i, s_i, 1), then B cover pairs (c_i, c_{i+1}, 0), then B stego pairs
// (s_i, s_{i+1}, 0). ConfigError if B < 2.
PairingPlan make_pairs(std::size_t pairs_in_batch);

// Mean binary cross entropy of probabilities p [N] (or [N,1]) against labels
// in {0,1}; p is clamped to [1e-12, 1-1e-12].
Tensor cross_entropy(const Tensor& p, const std::vector<int>& labels);

// Pair loss between two feature vectors:
// (1-y)/2 d^2 + y/2 max(0, m - d)^2 with d = ||f1 - f2||.
Tensor contrastive(const Tensor& f1, const Tensor& f2, int y, double margin);

// Mean of the pair loss over `plan`, rows of features [N,D].
Tensor contrastive_over_plan(const Tensor& features, const PairingPlan& plan, double margin);

// cross_entropy(p) + lambda * contrastive_over_plan(features).
Tensor combined_loss(const Tensor& p, const std::vector<int>& labels, const Tensor& features,
                     const PairingPlan& plan, const LossConfig& cfg);

}  // namespace stegsense

#endif  // STEGSENSE_LOSSES_HPP_
