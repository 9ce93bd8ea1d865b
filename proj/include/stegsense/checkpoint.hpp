#ifndef STEGSENSE_CHECKPOINT_HPP_
#define STEGSENSE_CHECKPOINT_HPP_

#include <cstdint>
#include <optional>
#include <string>

#include "stegsense/config.hpp"
#include "stegsense/network.hpp"
#include "stegsense/trainer.hpp"

namespace stegsense {

// Layout (all integers little-endian):
//   "STEGSNSE" u32 version
//   u64 length + config echo text
//   u32 record count, then per record:
//     u32 name length + name, u8 kind
//     kind 0 (tensor): u32 ndim, u64 dims..., doubles
//     kind 1 (text):   u64 length + bytes
// Records: model parameters and buffers ("model.*"), optimizer state
// ("state.*", "opt.*") and the best snapshot ("best.*") when present.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_echo;
  RunConfig config;
  ModelState model;
  std::optional<TrainState> state;
};

std::string encode_checkpoint(const std::string& config_echo, const ModelState& model, const TrainState* state);
// DataError on a corrupt file, ConfigError on a version mismatch.
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::string& path, const std::string& config_echo, const ModelState& model,
                     const TrainState* state);
Checkpoint load_checkpoint(const std::string& path);

// ConfigError carrying both echoes when the stored network differs from `cfg`.
void require_compatible(const Checkpoint& ckpt, const RunConfig& cfg);

}  // namespace stegsense

#endif  // STEGSENSE_CHECKPOINT_HPP_
