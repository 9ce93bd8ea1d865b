// stegsense: command-line front end.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 data error,
// 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stegsense/checkpoint.hpp"
#include "stegsense/config.hpp"
#include "stegsense/dataset.hpp"
#include "stegsense/diagnostics.hpp"
#include "stegsense/errors.hpp"
#include "stegsense/image.hpp"
#include "stegsense/ops.hpp"
#include "stegsense/rng.hpp"
#include "stegsense/trainer.hpp"

namespace fs = std::filesystem;
using namespace stegsense;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto w = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto h = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    return {w, h};
  } catch (const std::exception&) {
    throw ConfigError("--size expects WxH, got '" + s + "'");
  }
}

// Pairs of a split named in the checkpoint's manifest.
std::vector<ImagePair> split_pairs(const RunConfig& cfg, const std::string& which) {
  if (cfg.data.manifest.empty()) throw ConfigError("config has no data.manifest");
  const DatasetSplit split = read_manifest(cfg.data.manifest);
  const std::vector<PairPaths>* chosen = nullptr;
  if (which == "train") chosen = &split.train;
  else if (which == "val") chosen = &split.val;
  else if (which == "test") chosen = &split.test;
  else throw ConfigError("unknown split '" + which + "' (expected train, val or test)");
  if (chosen->empty()) throw DataError("split '" + which + "' of '" + cfg.data.manifest + "' is empty");
  return load_pairs(*chosen);
}

int cmd_gen_covers(std::size_t count, const std::string& size, const std::string& texture, std::uint64_t seed,
                   const std::string& out) {
  if (count == 0) throw UsageError("--count must be at least 1");
  const auto [w, h] = parse_size(size);
  const Texture tex = parse_texture(texture);
  fs::create_directories(out);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "cover_%05zu.pgm", i);
    const std::string path = (fs::path(out) / name).string();
    write_pgm(synthesize_cover(w, h, Rng::stream(seed, i).next_u64(), tex), path);
    std::cout << path << '\n';
  }
  return 0;
}

int cmd_embed(const std::string& covers, double payload, std::uint64_t seed, const std::string& out, bool audit) {
  if (!(payload > 0.0 && payload <= 1.0)) throw UsageError("--payload must be in (0,1]");
  const auto files = list_pgm_files(covers);
  if (files.empty()) throw DataError("no .pgm covers in '" + covers + "'");
  fs::create_directories(out);
  for (const auto& f : files) {
    const Image8 cover = read_pgm(f);
    std::vector<EmbedChange> log;
    const Image8 stego = embed_lsb_matching(cover, {payload, embed_seed(seed, f)}, &log);
    const fs::path target = fs::path(out) / fs::path(f).filename();
    write_pgm(stego, target.string());
    std::size_t changed = 0;
    for (const auto& c : log) changed += c.delta != 0;
    if (audit) {
      fs::path log_path = target;
      log_path.replace_extension(".log");
      std::ofstream lo(log_path, std::ios::binary);
      if (!lo) throw DataError("cannot open '" + log_path.string() + "' for writing");
      write_embed_log(lo, log);
    }
    std::cout << target.string() << ' ' << log.size() << ' ' << changed << '\n';
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, const std::vector<std::string>& sets,
              bool verbose) {
  RunConfig cfg = load_config(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  validate(cfg);
  if (cfg.data.manifest.empty()) cfg.data.manifest = (fs::path(cfg.out_dir) / "manifest.tsv").string();
  DatasetSplit split;
  if (fs::exists(cfg.data.manifest)) {
    split = read_manifest(cfg.data.manifest);
  } else {
    if (cfg.data.cover_dir.empty()) throw ConfigError("data.manifest does not exist and data.cover_dir is unset");
    if (cfg.data.stego_dir.empty()) cfg.data.stego_dir = (fs::path(cfg.out_dir) / "stego").string();
    fs::create_directories(fs::path(cfg.data.manifest).parent_path().empty() ? fs::path(".")
                                                                              : fs::path(cfg.data.manifest).parent_path());
    split = build_split(cfg.data.cover_dir, cfg.data.stego_dir, cfg.data.payload, cfg.data.ratios, cfg.data.seed,
                        cfg.data.manifest);
  }
  const std::string echo = echo_config(cfg);
  const auto train = load_pairs(split.train);
  const auto val = load_pairs(split.val);
  if (train.empty() || val.empty()) throw DataError("train and val splits must be non-empty");

  ModelState model;
  TrainState state;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    require_compatible(ck, cfg);
    if (!ck.state) throw DataError("'" + resume + "' holds no training state to resume");
    model = std::move(ck.model);
    state = std::move(*ck.state);
  } else {
    model = init_model(cfg.net, cfg.optim.seed);
    if (!cfg.init_checkpoint.empty()) {
      Checkpoint ck = load_checkpoint(cfg.init_checkpoint);
      require_compatible(ck, cfg);
      model = std::move(ck.model);
    }
    state = TrainState::fresh(model, cfg.optim);
  }
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream eo(fs::path(cfg.out_dir) / "config.txt", std::ios::binary);
    eo << echo;
  }
  fit(model, state, train, val, cfg.loss, cfg.optim, {cfg.out_dir, echo, verbose});
  std::cout << "epochs " << state.epoch << " best_val_acc " << format_double(state.best_val_acc) << " best_epoch "
            << state.best_epoch << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& which) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  const auto pairs = split_pairs(ck.config, which);
  const EvalMetrics m = evaluate(ck.model, pairs, ck.config.optim.pairs_per_batch);
  std::cout << "split " << which << "\nimages " << m.images << "\naccuracy " << format_double(m.accuracy)
            << "\nloss " << format_double(m.loss) << "\nfalse_alarm " << format_double(m.false_alarm)
            << "\nmissed_detection " << format_double(m.missed_detection) << '\n';
  return 0;
}

int cmd_diagnose(const std::string& ckpt_path, std::size_t n, const std::string& which, const std::string& out) {
  if (n == 0) throw UsageError("--pairs must be at least 1");
  Checkpoint ck = load_checkpoint(ckpt_path);
  const auto pairs = split_pairs(ck.config, which);
  if (n > pairs.size()) throw DataError("split '" + which + "' has only " + std::to_string(pairs.size()) + " pairs");
  const auto reports = diagnose_pairs(ck.model, pairs, n);
  const WhiteDotSummary s = batch_white_dot(reports);
  if (out.empty() || out == "-") {
    write_report_csv(std::cout, reports);
  } else {
    std::ofstream o(out, std::ios::binary);
    if (!o) throw DataError("cannot open '" + out + "' for writing");
    write_report_csv(o, reports);
  }
  std::cerr << "mean pos_fraction " << format_double(s.pos_fraction) << " neg_fraction "
            << format_double(s.neg_fraction) << " over " << s.pairs_used << " pairs (" << s.degenerate
            << " degenerate)\n";
  return 0;
}

int cmd_export_filters(const std::string& ckpt_path, const std::string& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (out.empty() || out == "-") {
    write_filters(std::cout, ck.model.bank);
  } else {
    export_filters(ck.model.bank, out);
  }
  return 0;
}

int cmd_export_residuals(const std::string& ckpt_path, const std::string& image, const std::string& out) {
  const FilterBank bank = ckpt_path.empty() ? FilterBank::initial() : load_checkpoint(ckpt_path).model.bank;
  export_residuals(read_pgm(image), bank, out);
  return 0;
}

int cmd_export_features(const std::string& ckpt_path, const std::string& which, const std::string& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  export_features(ck.model, split_pairs(ck.config, which), out);
  return 0;
}

void apply_thread_env() {
  if (const char* env = std::getenv("STEGSENSE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) throw ConfigError("STEGSENSE_THREADS must be a positive integer");
    ops::set_num_threads(static_cast<std::size_t>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Steganalysis detector toolkit: synthetic data, training, evaluation, diagnostics.", "stegsense"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "stegsense 1.0");

  std::size_t count = 0;
  std::string size = "64x64", texture = "mixed", out, covers, config, resume, ckpt, split = "test", image;
  std::uint64_t seed = 1;
  double payload = 0.0;
  bool audit = false, verbose = false, deterministic = true;
  std::size_t pairs = 0;
  std::vector<std::string> sets;

  auto* gen = app.add_subcommand("gen-covers", "Synthesize cover images as PGM files");
  gen->add_option("--count", count, "Number of covers")->required();
  gen->add_option("--size", size, "Image size WxH")->capture_default_str();
  gen->add_option("--texture", texture, "smooth, mixed or busy")->capture_default_str();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();

  auto* embed = app.add_subcommand("embed", "Embed a payload into every cover by LSB matching");
  embed->add_option("--covers", covers, "Directory of cover PGMs")->required();
  embed->add_option("--payload", payload, "Payload in bits per pixel, in (0,1]")->required();
  embed->add_option("--seed", seed, "Random seed")->capture_default_str();
  embed->add_option("--out", out, "Output directory for stegos")->required();
  embed->add_flag("--audit", audit, "Write an `x y delta` position log next to each stego");

  auto* train = app.add_subcommand("train", "Train a detector from a key=value config");
  train->add_option("--config", config, "Config file")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--set", sets, "Override a config entry (key=value), repeatable");
  train->add_flag("--verbose", verbose, "Print each metrics row to stderr");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split of its manifest");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--split", split, "val or test")->capture_default_str();

  auto* diag = app.add_subcommand("diagnose", "White-dot analysis over the first N pairs of a split");
  diag->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  diag->add_option("--pairs", pairs, "Number of pairs")->required();
  diag->add_option("--split", split, "train, val or test")->capture_default_str();
  diag->add_option("--out", out, "Report CSV path (default stdout)");

  auto* filt = app.add_subcommand("export-filters", "Write the filter bank as text");
  filt->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  filt->add_option("--out", out, "Output path (default stdout)");

  auto* resid = app.add_subcommand("export-residuals", "Write the 30 residual planes of an image as PGMs");
  resid->add_option("--ckpt", ckpt, "Checkpoint file (default: the projected seed bank)");
  resid->add_option("--image", image, "Input PGM")->required();
  resid->add_option("--out", out, "Output directory")->required();

  auto* feats = app.add_subcommand("export-features", "Write feature vectors of a split as CSV");
  feats->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  feats->add_option("--split", split, "train, val or test")->capture_default_str();
  feats->add_option("--out", out, "Output CSV path")->required();

  for (auto* sub : app.get_subcommands({})) {
    sub->add_flag("--deterministic,!--fast", deterministic,
                  "Fixed reduction order (always on; parallelism never changes results)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    apply_thread_env();
    if (gen->parsed()) return cmd_gen_covers(count, size, texture, seed, out);
    if (embed->parsed()) return cmd_embed(covers, payload, seed, out, audit);
    if (train->parsed()) return cmd_train(config, resume, sets, verbose);
    if (eval->parsed()) return cmd_eval(ckpt, split);
    if (diag->parsed()) return cmd_diagnose(ckpt, pairs, split, out);
    if (filt->parsed()) return cmd_export_filters(ckpt, out);
    if (resid->parsed()) return cmd_export_residuals(ckpt, image, out);
    if (feats->parsed()) return cmd_export_features(ckpt, split, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
