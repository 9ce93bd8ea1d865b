#include "stegsense/network.hpp"

#include <cmath>

#include "stegsense/errors.hpp"
#include "stegsense/ops.hpp"
#include "stegsense/rng.hpp"

namespace stegsense {

namespace {

constexpr std::size_t kPoolWindow = 3;
constexpr std::size_t kPoolStride = 2;
constexpr std::size_t kPoolPad = 1;

std::size_t pooled(std::size_t n) { return (n + 2 * kPoolPad - kPoolWindow) / kPoolStride + 1; }

Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = rng.uniform(-bound, bound);
  return Tensor::from(shape, std::move(v), true);
}

std::string block_key(std::size_t i, const char* what) {
  return "block" + std::to_string(i + 1) + "." + what;
}

}  // namespace

std::string_view block_activation_name(BlockActivation a) {
  return a == BlockActivation::kApam ? "apam" : "relu";
}

std::string_view block_pool_name(BlockPool p) { return p == BlockPool::kNone ? "none" : "avg"; }

void NetworkConfig::validate() const {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("net.kernel_size must be odd and positive, got " + std::to_string(kernel_size));
  }
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    if (block_channels[i] == 0) throw ConfigError("block " + std::to_string(i + 1) + " has zero channels");
  }
  if (pool_schedule[0] != BlockPool::kNone || pool_schedule[1] != BlockPool::kNone) {
    throw ConfigError("blocks 1 and 2 must not pool");
  }
  if (!(tlu_T > 0.0)) throw ConfigError("net.tlu_T must be positive");
  if (use_batch_norm && (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0))) {
    throw ConfigError("batch norm needs eps > 0 and momentum in (0,1]");
  }
}

void NetworkConfig::validate_input(std::size_t height, std::size_t width) const {
  validate();
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    if (pool_schedule[i] == BlockPool::kNone) continue;
    if (h < 2 || w < 2) {
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                        " is too small: block " + std::to_string(i + 1) + " would pool a " +
                        std::to_string(h) + "x" + std::to_string(w) + " map");
    }
    h = pooled(h);
    w = pooled(w);
  }
}

std::vector<NamedTensor> ModelState::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"bank.kernels", bank.kernels});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    out.push_back({block_key(i, "conv"), b.conv});
    if (b.bn_gamma.defined()) {
      out.push_back({block_key(i, "bn_gamma"), b.bn_gamma});
      out.push_back({block_key(i, "bn_beta"), b.bn_beta});
    }
    if (b.apam.w1.defined()) {
      out.push_back({block_key(i, "apam.w1"), b.apam.w1});
      out.push_back({block_key(i, "apam.b1"), b.apam.b1});
      out.push_back({block_key(i, "apam.w2"), b.apam.w2});
      out.push_back({block_key(i, "apam.b2"), b.apam.b2});
    }
  }
  out.push_back({"fc.weight", fc_weight});
  out.push_back({"fc.bias", fc_bias});
  return out;
}

std::vector<NamedTensor> ModelState::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].bn_mean.defined()) continue;
    out.push_back({block_key(i, "bn_running_mean"), blocks[i].bn_mean});
    out.push_back({block_key(i, "bn_running_var"), blocks[i].bn_var});
  }
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

ModelState ModelState::clone() const {
  auto copy = [](const Tensor& t) {
    if (!t.defined()) return Tensor();
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  ModelState m;
  m.cfg = cfg;
  m.bank = bank;
  m.bank.kernels = copy(bank.kernels);
  for (const Block& b : blocks) {
    Block nb;
    nb.conv = copy(b.conv);
    nb.bn_gamma = copy(b.bn_gamma);
    nb.bn_beta = copy(b.bn_beta);
    nb.bn_mean = copy(b.bn_mean);
    nb.bn_var = copy(b.bn_var);
    nb.apam = {copy(b.apam.w1), copy(b.apam.b1), copy(b.apam.w2), copy(b.apam.b2)};
    m.blocks.push_back(std::move(nb));
  }
  m.fc_weight = copy(fc_weight);
  m.fc_bias = copy(fc_bias);
  return m;
}

ModelState init_model(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState m;
  m.cfg = cfg;
  m.bank = FilterBank::initial(cfg.constraint);
  Rng rng(seed);
  const std::size_t k = cfg.kernel_size;
  std::size_t cin = kNumFilters;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const std::size_t cout = cfg.block_channels[i];
    Block b;
    b.conv = he_uniform({cout, cin, k, k}, cin * k * k, rng);
    if (cfg.use_batch_norm) {
      b.bn_gamma = Tensor::full({cout}, 1.0, true);
      b.bn_beta = Tensor::zeros({cout}, true);
      b.bn_mean = Tensor::zeros({cout});
      b.bn_var = Tensor::full({cout}, 1.0);
    }
    if (cfg.activation_schedule[i] == BlockActivation::kApam) b.apam = ApamParams::init(cout, rng);
    m.blocks.push_back(std::move(b));
    cin = cout;
  }
  const std::size_t d = cfg.feature_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> w(d);
  for (double& e : w) e = rng.uniform(-bound, bound);
  m.fc_weight = Tensor::from({d, 1}, std::move(w), true);
  m.fc_bias = Tensor::zeros({1}, true);
  return m;
}

ForwardResult forward(const Tensor& images, ModelState& model, bool training) {
  if (images.ndim() != 4 || images.dim(1) != 1) {
    throw DimensionError("forward: expected images [N,1,H,W], got " + shape_str(images.shape()));
  }
  const NetworkConfig& cfg = model.cfg;
  cfg.validate_input(images.dim(2), images.dim(3));
  const std::size_t n = images.dim(0);

  ForwardResult r;
  Tensor x = abs_layer(tlu(compute_residuals(images, model.bank), cfg.tlu_T));
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    Block& b = model.blocks[i];
    x = ops::conv2d(x, b.conv, 1, cfg.kernel_size / 2);
    if (cfg.use_batch_norm) {
      x = ops::batch_norm(x, b.bn_gamma, b.bn_beta, b.bn_mean, b.bn_var, training, cfg.bn_momentum,
                          cfg.bn_eps);
    }
    if (i == 0) r.block1_preact = x;
    if (cfg.activation_schedule[i] == BlockActivation::kApam) {
      ApamOutput a = apam_forward(x, b.apam);
      x = a.y;
      r.alphas.push_back(a.alpha);
    } else {
      x = ops::relu(x);
    }
    if (cfg.pool_schedule[i] == BlockPool::kAvgStride2) {
      x = ops::avg_pool2d(x, kPoolWindow, kPoolStride, kPoolPad);
    }
  }
  r.features = ops::global_avg_pool(x);
  r.p = ops::reshape(ops::sigmoid(ops::linear(r.features, model.fc_weight, model.fc_bias)), {n});
  return r;
}

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v = {
      {"origin", false, false, false},
      {"apam", true, false, false},
      {"constraint", false, true, false},
      {"contrastive", false, false, true},
      {"apam+constraint", true, true, false},
      {"apam+contrastive", true, false, true},
      {"constraint+contrastive", false, true, true},
      {"full", true, true, true},
  };
  return v;
}

const AblationVariant& ablation_variant(std::string_view name) {
  for (const auto& v : ablation_variants()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown ablation preset '" + std::string(name) + "'");
}

void apply_ablation(const AblationVariant& v, NetworkConfig& net, LossConfig& loss) {
  const NetworkConfig defaults;
  net.activation_schedule = defaults.activation_schedule;
  if (!v.apam) net.activation_schedule.fill(BlockActivation::kRelu);
  net.constraint = v.constraint ? ConstraintMode::kSupport : ConstraintMode::kNone;
  loss.lambda = v.contrastive ? LossConfig{}.lambda : 0.0;
}

}  // namespace stegsense
