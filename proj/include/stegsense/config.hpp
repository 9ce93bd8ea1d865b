#ifndef STEGSENSE_CONFIG_HPP_
#define STEGSENSE_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stegsense/dataset.hpp"
#include "stegsense/losses.hpp"
#include "stegsense/network.hpp"
#include "stegsense/trainer.hpp"

namespace stegsense {

struct DataConfig {
  std::string cover_dir;
  std::string stego_dir;
  std::string manifest;
  double payload = 0.4;
  SplitRatios ratios;
  std::uint64_t seed = 1;
  bool operator==(const DataConfig& o) const {
    return cover_dir == o.cover_dir && stego_dir == o.stego_dir && manifest == o.manifest &&
           payload == o.payload && ratios.train == o.ratios.train && ratios.val == o.ratios.val &&
           ratios.test == o.ratios.test && seed == o.seed;
  }
};

// Everything a run needs. Text form: one `key=value` per line, `#` starts a
// comment line. The training seed lives in optim.seed (key run.seed).
struct RunConfig {
  NetworkConfig net;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  std::string out_dir = "run";
  bool deterministic = true;
  std::string init_checkpoint;

  bool operator==(const RunConfig& o) const {
    return net == o.net && loss.margin == o.loss.margin && loss.lambda == o.loss.lambda &&
           optim == o.optim && data == o.data && out_dir == o.out_dir &&
           deterministic == o.deterministic && init_checkpoint == o.init_checkpoint;
  }
};

// All keys in canonical order.
const std::vector<std::string>& config_keys();

// Sets one key; ConfigError on unknown key or bad value.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

// Parses text over the defaults. Unknown keys, malformed lines and duplicate
// keys are ConfigError (message carries `source:line`). Validates the result.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

// Canonical text: every key in canonical order, shortest round-trip numbers.
std::string echo_config(const RunConfig& cfg);
// Only the net.* lines of the echo; two models are compatible iff equal.
std::string network_echo(const RunConfig& cfg);
std::string network_echo_of(std::string_view full_echo);

void validate(const RunConfig& cfg);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace stegsense

#endif  // STEGSENSE_CONFIG_HPP_
