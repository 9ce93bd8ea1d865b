#include "stegsense/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stegsense/checkpoint.hpp"
#include "stegsense/errors.hpp"

namespace stegsense {

void OptimConfig::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("optim.rho must be in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(lr_scale > 0.0)) throw ConfigError("optim.lr_scale must be positive");
  if (step_epochs == 0) throw ConfigError("optim.step_epochs must be positive");
  if (!(step_factor > 0.0 && step_factor <= 1.0)) throw ConfigError("optim.step_factor must be in (0,1]");
  if (pairs_per_batch < 2) throw ConfigError("optim.pairs_per_batch must be at least 2");
  if (!(plateau_tolerance >= 0.0)) throw ConfigError("optim.plateau_tolerance must be non-negative");
}

double lr_scale_at(const OptimConfig& cfg, std::size_t epoch) {
  double s = cfg.lr_scale;
  for (std::size_t i = 0; i < epoch / cfg.step_epochs; ++i) s *= cfg.step_factor;
  return s;
}

TrainState TrainState::fresh(const ModelState& model, const OptimConfig& cfg) {
  TrainState s;
  for (const auto& p : model.parameters()) {
    s.names.push_back(p.name);
    s.eg.emplace_back(p.tensor.numel(), 0.0);
    s.edx.emplace_back(p.tensor.numel(), 0.0);
  }
  s.lr_scale = lr_scale_at(cfg, 0);
  return s;
}

void adadelta_step(const std::vector<NamedTensor>& params, TrainState& state, const OptimConfig& cfg) {
  if (params.size() != state.names.size()) {
    throw UsageError("adadelta_step: " + std::to_string(params.size()) + " parameters, state holds " +
                     std::to_string(state.names.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& t = params[k].tensor;
    const auto grad = t.grad();
    if (!grad.empty()) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
          throw NumericError("non-finite gradient in parameter '" + params[k].name + "' at flat index " +
                             std::to_string(i));
        }
      }
    }
  }
  const double rho = cfg.rho, eps = cfg.eps, wd = cfg.weight_decay, scale = state.lr_scale;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    const auto grad = t.grad();
    auto x = t.mutable_data();
    auto& eg = state.eg[k];
    auto& edx = state.edx[k];
    if (eg.size() != x.size()) throw UsageError("adadelta_step: state shape mismatch for '" + params[k].name + "'");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + wd * x[i];
      eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
      const double dx = -(std::sqrt(edx[i] + eps) / std::sqrt(eg[i] + eps)) * g * scale;
      edx[i] = rho * edx[i] + (1.0 - rho) * dx * dx;
      x[i] += dx;
    }
    t.zero_grad();
  }
  ++state.steps;
}

EpochMetrics train_epoch(ModelState& model, const std::vector<ImagePair>& train, const LossConfig& loss_cfg,
                         const OptimConfig& cfg, TrainState& state, const StepHook& hook) {
  if (train.empty()) throw ConfigError("training set is empty");
  state.lr_scale = lr_scale_at(cfg, state.epoch);
  const auto plan = batch_plan(train.size(), cfg.pairs_per_batch, cfg.seed, state.epoch);
  if (plan.empty()) {
    throw ConfigError("training set has " + std::to_string(train.size()) + " pairs, fewer than one batch of " +
                      std::to_string(cfg.pairs_per_batch));
  }
  const PairingPlan pairing = make_pairs(cfg.pairs_per_batch);
  const auto params = model.parameters();
  EpochMetrics m;
  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  for (const auto& ids : plan) {
    const PairBatch batch = assemble_batch(train, ids);
    const ForwardResult r = forward(batch.images, model, true);
    const Tensor loss = combined_loss(r.p, batch.labels, r.features, pairing, loss_cfg);
    loss.check_finite("training loss");
    loss.backward();
    adadelta_step(params, state, cfg);
    const std::size_t resets = model.bank.project();
    ++state.projections;
    state.proj_resets += resets;
    m.proj_resets += resets;
    for (const auto& p : params) p.tensor.check_finite("parameter '" + p.name + "'");

    loss_sum += loss.item();
    const auto p = r.p.data();
    for (std::size_t i = 0; i < p.size(); ++i) correct += (predicts_stego(p[i]) ? 1 : 0) == batch.labels[i];
    seen += p.size();
    ++m.batches;
    if (hook) hook(model, state);
  }
  m.loss = loss_sum / static_cast<double>(m.batches);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return m;
}

EvalMetrics score_predictions(const std::vector<double>& p, const std::vector<int>& labels) {
  if (p.empty() || p.size() != labels.size()) throw ConfigError("evaluation needs matching, non-empty predictions");
  EvalMetrics m;
  std::size_t correct = 0, covers = 0, stegos = 0, false_alarms = 0, misses = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool said_stego = predicts_stego(p[i]);
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    if (labels[i] == 1) {
      ++stegos;
      misses += !said_stego;
      correct += said_stego;
      loss -= std::log(q);
    } else {
      ++covers;
      false_alarms += said_stego;
      correct += !said_stego;
      loss -= std::log(1.0 - q);
    }
  }
  m.images = p.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(p.size());
  m.loss = loss / static_cast<double>(p.size());
  m.false_alarm = covers ? static_cast<double>(false_alarms) / static_cast<double>(covers) : 0.0;
  m.missed_detection = stegos ? static_cast<double>(misses) / static_cast<double>(stegos) : 0.0;
  return m;
}

EvalMetrics evaluate(ModelState& model, const std::vector<ImagePair>& pairs, std::size_t pairs_per_batch) {
  if (pairs.empty()) throw ConfigError("evaluation set is empty");
  NoGradGuard no_grad;
  std::vector<double> p;
  std::vector<int> labels;
  for (std::size_t start = 0; start < pairs.size(); start += pairs_per_batch) {
    std::vector<std::size_t> ids;
    for (std::size_t i = start; i < std::min(pairs.size(), start + pairs_per_batch); ++i) ids.push_back(i);
    const PairBatch batch = assemble_batch(pairs, ids);
    const ForwardResult r = forward(batch.images, model, false);
    const auto pd = r.p.data();
    p.insert(p.end(), pd.begin(), pd.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return score_predictions(p, labels);
}

bool plateaued(const std::vector<double>& history, std::size_t patience, double tolerance) {
  if (patience == 0 || history.size() < patience) return false;
  const auto first = history.end() - static_cast<std::ptrdiff_t>(patience);
  const auto [lo, hi] = std::minmax_element(first, history.end());
  return *hi - *lo < tolerance;
}

namespace {

std::string metrics_row(std::size_t epoch, const EpochMetrics& t, const EvalMetrics& v, double lr_scale,
                        std::size_t resets) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu", epoch, t.loss, t.accuracy, v.loss,
                v.accuracy, lr_scale, resets);
  return buf;
}

void write_metrics(const std::string& path, const std::vector<std::string>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << r << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace

void fit(ModelState& model, TrainState& state, const std::vector<ImagePair>& train,
         const std::vector<ImagePair>& val, const LossConfig& loss_cfg, const OptimConfig& cfg,
         const FitOptions& options) {
  namespace fs = std::filesystem;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  while (state.epoch < cfg.epochs && !plateaued(state.train_acc_history, cfg.patience, cfg.plateau_tolerance)) {
    const EpochMetrics t = train_epoch(model, train, loss_cfg, cfg, state);
    const EvalMetrics v = evaluate(model, val, cfg.pairs_per_batch);
    state.metrics_rows.push_back(metrics_row(state.epoch, t, v, state.lr_scale, t.proj_resets));
    state.train_acc_history.push_back(t.accuracy);
    const bool improved = v.accuracy > state.best_val_acc;
    if (improved) {
      state.best_val_acc = v.accuracy;
      state.best_epoch = state.epoch;
      state.best = model.clone();
    }
    ++state.epoch;
    if (options.verbose) std::cerr << state.metrics_rows.back() << '\n';
    if (!options.out_dir.empty()) {
      write_metrics((fs::path(options.out_dir) / "metrics.csv").string(), state.metrics_rows);
      save_checkpoint((fs::path(options.out_dir) / "last.ckpt").string(), options.config_echo, model, &state);
      if (improved) {
        save_checkpoint((fs::path(options.out_dir) / "best.ckpt").string(), options.config_echo, model, nullptr);
      }
    }
  }
}

}  // namespace stegsense
