#pragma once

// Run configuration in a plain `key = value` text format. Lines starting
// with '#' and blank lines are ignored; unknown keys are a config error.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qkalign/model.hpp"
#include "qkalign/objectives.hpp"
#include "qkalign/optim.hpp"
#include "qkalign/synth.hpp"

namespace qkalign {

struct Threshold {
  double position = 0.0;
  double angle_deg = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::vector<std::size_t> lr_decay_epochs{10, 20};
  double lr_decay_factor = 0.1;
  // Test samples run through the diagnostics after each epoch (0 = none).
  std::size_t diag_samples = 32;
  // Test samples evaluated after each epoch (0 = all).
  std::size_t eval_samples = 0;
  bool finetune_position = false;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  LossConfig loss;
  AdamConfig adam;
  TrainConfig train;
  std::vector<Threshold> thresholds{{0.2, 5.0}, {0.2, 10.0}, {0.3, 5.0}, {0.3, 10.0}};
  std::uint64_t seed = 1;

  // Copies the quantities model and data must agree on (token width, grids,
  // scene count) from the model side and validates everything.
  void sync();
  void validate() const;
  double learning_rate(std::size_t epoch) const;
};

// Applies one `key = value` assignment.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);
void save_config(const std::string& path, const RunConfig& config);

}  // namespace qkalign
