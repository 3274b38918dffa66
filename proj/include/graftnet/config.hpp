#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "graftnet/model.hpp"

namespace graftnet {

struct TrainConfig {
  ModelConfig model;
  double lr_backbone_attn = 0.003;  // max learning rate of the attention backbone
  double lr_other = 0.03;           // tied to 10x lr_backbone_attn unless unlink_lr
  bool unlink_lr = false;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_size = 4;
  std::size_t epochs = 32;
  double warmup_fraction = 0.1;
  double beta = 1.0;
  std::uint64_t seed = 7;  // model init, shuffling, augmentation, split
  double val_fraction = 0.2;
  bool augment = true;
  std::size_t jitter_quantum = 32;  // 0 disables scale jitter
};

/// "R5-S2" for stage 2.
std::string graft_pair_name(std::size_t stage);
/// Accepts "R5-S<k>", "S<k>" or "<k>" for k in 1..4.
std::size_t parse_graft_pair(const std::string& s);

/// Parses `key = value` lines; '#' starts a comment. Keys not present keep
/// their defaults. Unknown keys and bad values raise ConfigError.
TrainConfig parse_config(const std::string& text, const std::string& origin = "<config>");
TrainConfig load_config(const std::string& path);

/// Applies one `key=value` override.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Enforces ranges and the learning-rate link. Called by the parsers; call it
/// again after programmatic edits.
void validate_config(TrainConfig& config);

/// Every key, one per line, in a form parse_config reads back exactly.
std::string format_config(const TrainConfig& config);

}  // namespace graftnet
