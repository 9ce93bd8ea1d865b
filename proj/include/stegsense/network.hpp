#ifndef STEGSENSE_NETWORK_HPP_
#define STEGSENSE_NETWORK_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stegsense/activations.hpp"
#include "stegsense/filterbank.hpp"
#include "stegsense/losses.hpp"
#include "stegsense/tensor.hpp"

namespace stegsense {

inline constexpr std::size_t kNumBlocks = 8;

enum class BlockActivation { kApam, kRelu };
enum class BlockPool { kNone, kAvgStride2 };

std::string_view block_activation_name(BlockActivation a);
std::string_view block_pool_name(BlockPool p);

struct NetworkConfig {
  std::array<std::size_t, kNumBlocks> block_channels{30, 30, 30, 64, 64, 128, 128, 256};
  std::size_t kernel_size = 3;
  std::array<BlockPool, kNumBlocks> pool_schedule{
      BlockPool::kNone, BlockPool::kNone,       BlockPool::kAvgStride2, BlockPool::kNone,
      BlockPool::kAvgStride2, BlockPool::kNone, BlockPool::kAvgStride2, BlockPool::kNone};
  std::array<BlockActivation, kNumBlocks> activation_schedule{
      BlockActivation::kApam, BlockActivation::kRelu, BlockActivation::kRelu, BlockActivation::kApam,
      BlockActivation::kApam, BlockActivation::kApam, BlockActivation::kApam, BlockActivation::kApam};
  double tlu_T = 3.0;
  bool use_batch_norm = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  ConstraintMode constraint = ConstraintMode::kSupport;

  std::size_t feature_dim() const { return block_channels.back(); }

  // ConfigError on a bad kernel size, zero widths, pooling in blocks 1-2,
  // or a non-positive threshold.
  void validate() const;
  // As validate(), plus: every pooled block must see at least 2x2 input.
  void validate_input(std::size_t height, std::size_t width) const;

  bool operator==(const NetworkConfig&) const = default;
};

struct Block {
  Tensor conv;       // [Cout, Cin, k, k], no bias
  Tensor bn_gamma;   // [Cout] (undefined without batch norm)
  Tensor bn_beta;    // [Cout]
  Tensor bn_mean;    // running statistics, not trained
  Tensor bn_var;
  ApamParams apam;   // only for APAM blocks
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelState {
  NetworkConfig cfg;
  FilterBank bank;
  std::vector<Block> blocks;
  Tensor fc_weight;  // [D, 1]
  Tensor fc_bias;    // [1]

  // Trainable tensors in a fixed order; names are stable checkpoint keys.
  std::vector<NamedTensor> parameters() const;
  // Batch-norm running statistics.
  std::vector<NamedTensor> buffers() const;
  std::size_t parameter_count() const;

  // Independent deep copy.
  ModelState clone() const;
};

// Projected seed bank; He-uniform conv weights; APAM excitation per its own
// init; classifier uniform in +-1/sqrt(D) with zero bias; BN gamma 1, beta 0.
ModelState init_model(const NetworkConfig& cfg, std::uint64_t seed);

struct ForwardResult {
  Tensor p;                  // [N], in (0,1)
  Tensor features;           // [N, feature_dim], GAP output
  Tensor block1_preact;      // [N, C1, H, W], input of block 1's activation
  std::vector<Tensor> alphas;  // one [N,C] per APAM block, in block order
};

// Training mode uses batch statistics and updates the running buffers;
// eval mode uses the running buffers.
ForwardResult forward(const Tensor& images, ModelState& model, bool training);

// Table-style ablation toggles applied on top of a base config.
struct AblationVariant {
  std::string name;
  bool apam = true;
  bool constraint = true;
  bool contrastive = true;
};

// origin, apam, constraint, contrastive, apam+constraint, apam+contrastive,
// constraint+contrastive, full.
const std::vector<AblationVariant>& ablation_variants();
const AblationVariant& ablation_variant(std::string_view name);  // ConfigError if unknown

// Disabled APAM turns every block into ReLU; disabled constraint selects the
// unconstrained projection; disabled contrastive sets lambda = 0. Enabled
// toggles restore the defaults.
void apply_ablation(const AblationVariant& v, NetworkConfig& net, LossConfig& loss);

}  // namespace stegsense

#endif  // STEGSENSE_NETWORK_HPP_
