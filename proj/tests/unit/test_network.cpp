#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/gradcheck.hpp"
#include "stegsense/losses.hpp"
#include "stegsense/network.hpp"
#include "stegsense/ops.hpp"

using namespace stegsense;
using testing::random_tensor;
using testing::values;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.block_channels = {4, 4, 4, 6, 6, 8, 8, 8};
  return cfg;
}

}  // namespace

TEST_CASE("default parameter count is fixed") {
  const ModelState m = init_model(NetworkConfig{}, 1);
  CHECK(m.parameter_count() == 920535);
  CHECK(m.parameters().front().name == "bank.kernels");
  CHECK(m.parameters().back().name == "fc.bias");
  CHECK(m.buffers().size() == 16);
}

TEST_CASE("forward shapes and probability range") {
  ModelState m = init_model(NetworkConfig{}, 3);
  const Tensor x = random_tensor({2, 1, 32, 32}, 4, 0, 255);
  const ForwardResult r = forward(x, m, true);
  REQUIRE(r.p.shape() == Shape{2});
  REQUIRE(r.features.shape() == Shape{2, 256});
  REQUIRE(r.block1_preact.shape() == Shape{2, 30, 32, 32});
  CHECK(r.alphas.size() == 6);
  for (double p : r.p.data()) CHECK((p > 0.0 && p < 1.0));
}

TEST_CASE("constant images give a level-independent output") {
  ModelState m = init_model(small_config(), 5);
  std::vector<double> first;
  for (double level : {0.0, 31.0, 128.0, 255.0}) {
    const ForwardResult r = forward(Tensor::full({2, 1, 16, 16}, level), m, false);
    for (double v : r.block1_preact.data()) REQUIRE(v == 0.0);
    if (first.empty()) first = values(r.p);
    CHECK(values(r.p) == first);
  }
}

TEST_CASE("duplicated rows give identical outputs in eval mode") {
  ModelState m = init_model(small_config(), 6);
  std::vector<double> img = values(random_tensor({1, 1, 16, 16}, 7, 0, 255));
  img.insert(img.end(), img.begin(), img.end());
  const ForwardResult r = forward(Tensor::from({2, 1, 16, 16}, img), m, false);
  CHECK(r.p.data()[0] == r.p.data()[1]);
  const std::size_t d = r.features.dim(1);
  for (std::size_t j = 0; j < d; ++j) CHECK(r.features.data()[j] == r.features.data()[d + j]);
}

TEST_CASE("init is deterministic per seed and keeps the bank fixed") {
  const ModelState a = init_model(small_config(), 11), b = init_model(small_config(), 11),
                   c = init_model(small_config(), 12);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(pa[i].tensor) == values(pb[i].tensor));
  CHECK(values(a.bank.kernels) == values(c.bank.kernels));
  CHECK(values(a.blocks[0].conv) != values(c.blocks[0].conv));
  // He-uniform bound
  const double bound = std::sqrt(6.0 / (30.0 * 9.0));
  for (double v : a.blocks[0].conv.data()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("clone is deep") {
  ModelState a = init_model(small_config(), 2);
  ModelState b = a.clone();
  b.fc_bias.mutable_data()[0] = 9.0;
  CHECK(a.fc_bias.data()[0] == 0.0);
}

TEST_CASE("training mode updates batch-norm buffers, eval mode does not") {
  ModelState m = init_model(small_config(), 2);
  const Tensor x = random_tensor({2, 1, 16, 16}, 3, 0, 255);
  forward(x, m, false);
  CHECK(m.blocks[0].bn_mean.data()[0] == 0.0);
  forward(x, m, true);
  CHECK(m.blocks[0].bn_mean.data()[0] != 0.0);
}

TEST_CASE("config validation") {
  NetworkConfig cfg;
  cfg.kernel_size = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetworkConfig{};
  cfg.pool_schedule[0] = BlockPool::kAvgStride2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = NetworkConfig{};
  CHECK_THROWS_AS(cfg.validate_input(4, 4), ConfigError);
  CHECK_NOTHROW(cfg.validate_input(16, 16));
  ModelState m = init_model(NetworkConfig{}, 1);
  CHECK_THROWS_AS(forward(Tensor::zeros({2, 1, 4, 4}), m, false), ConfigError);
}

TEST_CASE("ablation presets") {
  CHECK(ablation_variants().size() == 8);
  NetworkConfig net;
  LossConfig loss;
  apply_ablation(ablation_variant("origin"), net, loss);
  for (auto a : net.activation_schedule) CHECK(a == BlockActivation::kRelu);
  CHECK(net.constraint == ConstraintMode::kNone);
  CHECK(loss.lambda == 0.0);
  apply_ablation(ablation_variant("constraint"), net, loss);
  CHECK(net.constraint == ConstraintMode::kSupport);
  CHECK(net.activation_schedule[0] == BlockActivation::kRelu);
  CHECK(loss.lambda == 0.0);
  apply_ablation(ablation_variant("full"), net, loss);
  CHECK(net == NetworkConfig{});
  CHECK(loss.lambda == 0.05);
  CHECK_THROWS_AS(ablation_variant("everything"), ConfigError);
}

TEST_CASE("full network and combined loss pass a sampled gradient check") {
  ModelState m = init_model(small_config(), 21);
  const Tensor x = random_tensor({4, 1, 16, 16}, 22, 0, 255);
  const std::vector<int> labels = {0, 1, 0, 1};
  const PairingPlan plan = make_pairs(2);
  std::vector<Tensor> inputs;
  for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
  GradCheckOptions opt;
  opt.skip_straddled_kinks = true;
  opt.max_components = 6;
  opt.seed = 1;
  const auto r = gradient_check(
      [&] {
        const ForwardResult fr = forward(x, m, true);
        return combined_loss(fr.p, labels, fr.features, plan, LossConfig{});
      },
      inputs, opt);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.checked > 50);
}
