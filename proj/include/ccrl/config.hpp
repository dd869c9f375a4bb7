#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ccrl/augment.hpp"
#include "ccrl/loss.hpp"
#include "ccrl/model.hpp"

namespace ccrl {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 2;
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  bool decoupled_weight_decay = false;
  double temperature = 0.07;
  double momentum = 0.99;  // desk preset; the paper profile uses 0.999
  std::size_t queue_capacity = 1024;
  NegativeSet negatives = NegativeSet::batch_and_queue;
  std::size_t checkpoint_every = 10;  // epochs; the final checkpoint is always written
  std::uint64_t seed = 0;
  // Ablation toggles.
  bool local_global = true;
  bool ensembling = true;
  bool prediction_head = true;

  void validate() const;
};

struct EvalConfig {
  bool projected = false;
  std::size_t k = 0;  // 0: number of distinct labels
  std::size_t restarts = 10;
};

/// Everything a run needs; every field has a default.
struct RunConfig {
  std::string profile = "desk";
  TrainConfig train;
  AugmentConfig augment;
  BackboneConfig backbone;
  HeadConfig head;
  EvalConfig eval;

  static RunConfig desk();
  static RunConfig paper();
  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source);
std::vector<std::pair<std::string, std::string>> read_key_value_file(const std::filesystem::path& path);

/// Applies pairs in order, except that `profile` is applied first. Unknown
/// keys and unparsable values throw ConfigError.
void apply_settings(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv);
void set_option(RunConfig& cfg, const std::string& key, const std::string& value);
/// Every key with its current value, in registry order; re-parsable.
std::string to_key_values(const RunConfig& cfg);
std::vector<std::string> option_keys();

}  // namespace ccrl
