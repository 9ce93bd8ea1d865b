#ifndef STEGSENSE_TRAINER_HPP_
#define STEGSENSE_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stegsense/dataset.hpp"
#include "stegsense/losses.hpp"
#include "stegsense/network.hpp"

namespace stegsense {

struct OptimConfig {
  double rho = 0.95;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  double lr_scale = 1.0;
  std::size_t step_epochs = 50;
  double step_factor = 0.8;
  std::size_t epochs = 300;
  std::uint64_t seed = 1;
  std::size_t pairs_per_batch = 16;
  // Stop once train accuracy has moved less than plateau_tolerance over the
  // last `patience` epochs (0 disables).
  std::size_t patience = 20;
  double plateau_tolerance = 1e-3;

  void validate() const;  // ConfigError
  bool operator==(const OptimConfig&) const = default;
};

// lr_scale * step_factor^floor(epoch / step_epochs), by repeated multiplication.
double lr_scale_at(const OptimConfig& cfg, std::size_t epoch);

struct TrainState {
  std::vector<std::string> names;          // parameter names, model order
  std::vector<std::vector<double>> eg;     // E[g^2]
  std::vector<std::vector<double>> edx;    // E[dx^2]
  std::size_t epoch = 0;                   // next epoch to run
  double lr_scale = 1.0;
  std::uint64_t steps = 0;
  std::uint64_t projections = 0;
  std::uint64_t proj_resets = 0;
  double best_val_acc = -1.0;
  std::size_t best_epoch = 0;
  std::vector<double> train_acc_history;
  std::vector<std::string> metrics_rows;   // CSV rows written so far
  std::optional<ModelState> best;         // best-validation snapshot

  static TrainState fresh(const ModelState& model, const OptimConfig& cfg);
};

// One AdaDelta update over `params` with their accumulated gradients; a
// parameter without a gradient is stepped with g = 0. Gradients are cleared
// afterwards. NumericError naming the parameter on a non-finite gradient.
void adadelta_step(const std::vector<NamedTensor>& params, TrainState& state, const OptimConfig& cfg);

struct EpochMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t batches = 0;
  std::size_t proj_resets = 0;
};

// Hook run after each step+projection (tests use it to check invariants).
using StepHook = std::function<void(const ModelState&, const TrainState&)>;

EpochMetrics train_epoch(ModelState& model, const std::vector<ImagePair>& train, const LossConfig& loss_cfg,
                         const OptimConfig& cfg, TrainState& state, const StepHook& hook = {});

struct EvalMetrics {
  double accuracy = 0.0;
  double loss = 0.0;
  double false_alarm = 0.0;       // covers called stego / covers
  double missed_detection = 0.0;  // stegos called cover / stegos
  std::size_t images = 0;
};

// p >= 0.5 is called stego (a tie counts as stego).
inline bool predicts_stego(double p) { return p >= 0.5; }

// Metrics from probabilities and labels; ConfigError if empty.
EvalMetrics score_predictions(const std::vector<double>& p, const std::vector<int>& labels);

// Eval-mode pass over every cover and stego of `pairs`.
EvalMetrics evaluate(ModelState& model, const std::vector<ImagePair>& pairs, std::size_t pairs_per_batch = 16);

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr_scale,proj_resets";

bool plateaued(const std::vector<double>& history, std::size_t patience, double tolerance);

struct FitOptions {
  std::string out_dir;      // empty: no files written
  std::string config_echo;  // stored in checkpoints
  bool verbose = false;
};

// Runs epochs from state.epoch until the budget or the plateau rule. After
// each epoch: metrics row, best-val snapshot, and (with out_dir) metrics.csv,
// last.ckpt and best.ckpt are rewritten.
void fit(ModelState& model, TrainState& state, const std::vector<ImagePair>& train,
         const std::vector<ImagePair>& val, const LossConfig& loss_cfg, const OptimConfig& cfg,
         const FitOptions& options);

}  // namespace stegsense

#endif  // STEGSENSE_TRAINER_HPP_
