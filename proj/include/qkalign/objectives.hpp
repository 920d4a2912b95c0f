#pragma once

#include <span>

#include "qkalign/model.hpp"
#include "qkalign/pose.hpp"
#include "qkalign/tensor.hpp"

namespace qkalign {

struct LossConfig {
  double lambda_aux = 0.1;
  double s_t_init = 0.0;
  double s_r_init = -3.0;
  bool qka_enabled = true;
};

// Learnable uncertainty weights of the pose loss.
struct LossParams {
  Tensor s_t;
  Tensor s_r;

  static LossParams init(const LossConfig& config);
};

// Component values of one objective evaluation. `total` keeps the graph.
struct LossBreakdown {
  Tensor total;
  double l_t = 0.0;
  double l_r = 0.0;
  double l_pose = 0.0;
  double l_scene = 0.0;
  double l_qka_t = 0.0;
  double l_qka_r = 0.0;
  double l_aux = 0.0;
  double l_total = 0.0;
  double s_t = 0.0;
  double s_r = 0.0;
  double lambda_aux = 0.0;
};

// ‖t - t̂‖₂
Tensor position_loss(const Tensor& t, const Tensor& t_hat);
// ‖r - r̂/‖r̂‖‖₂; domain error for r̂ = 0.
Tensor orientation_loss(const Tensor& r, const Tensor& r_hat);

// L_t·exp(-s_t) + s_t + L_r·exp(-s_r) + s_r
Tensor pose_loss(const Tensor& t, const Tensor& t_hat, const Tensor& r, const Tensor& r_hat,
                 const Tensor& s_t, const Tensor& s_r);
Tensor weighted_pose_loss(const Tensor& l_t, const Tensor& l_r, const Tensor& s_t, const Tensor& s_r);

// -Σ y_j log ŷ_j for one-hot y; contract error when y is not one-hot.
Tensor scene_loss(const Tensor& y_onehot, const Tensor& y_hat);
// Same quantity from raw scores via log-softmax.
Tensor scene_loss_from_logits(const Tensor& logits, std::size_t true_scene);

// Mean over (layer, head) of centroid distances; records must cover every
// layer in [1, layers] and head in [1, heads] exactly once.
Tensor qka_loss(std::span<const AttentionRecord> records, std::size_t layers, std::size_t heads);

// L_total = L_pose + L_scene + λ_aux·(L_QKA_t + L_QKA_r)
LossBreakdown combine_losses(const Tensor& l_pose, const Tensor& l_scene, const Tensor& l_qka_t,
                             const Tensor& l_qka_r, double lambda_aux);

// Full objective for one forward pass. QKA terms are always measured when
// encoder self-attention records exist; with QKA disabled their weight is 0.
LossBreakdown total_loss(const ModelOutput& output, const Pose& truth, std::size_t true_scene,
                         const LossParams& params, const LossConfig& config, const ModelConfig& model);

}  // namespace qkalign
