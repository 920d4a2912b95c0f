#pragma once

// Model checkpoints: magic, manifest length, JSON manifest, then every
// parameter as row-major little-endian doubles (layout in docs/FORMATS.md).

#include <string>
#include <vector>

#include "qkalign/config.hpp"
#include "qkalign/model.hpp"
#include "qkalign/objectives.hpp"

namespace qkalign {

struct Checkpoint {
  RunConfig config;
  std::string phase = "train";  // "train" or "finetune-position"
  std::size_t epoch = 0;        // epochs completed
  std::vector<NamedTensor> params;
};

// Model parameters followed by loss.s_t and loss.s_r.
std::vector<NamedTensor> checkpoint_tensors(const PoseTransformer& model, const LossParams& loss);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

// Copies values by name into a model built from checkpoint.config. Every
// tensor must be present with a matching shape.
void restore(const Checkpoint& checkpoint, PoseTransformer& model, LossParams& loss);

struct LoadedModel {
  Checkpoint checkpoint;
  PoseTransformer model;
  LossParams loss;
};

LoadedModel load_model(const std::string& path);

}  // namespace qkalign
