#include "qkalign/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "qkalign/error.hpp"

namespace qkalign {

LossParams LossParams::init(const LossConfig& config) {
  return {Tensor::scalar(config.s_t_init, true), Tensor::scalar(config.s_r_init, true)};
}

Tensor position_loss(const Tensor& t, const Tensor& t_hat) {
  return l2_norm(sub(reshape(t, {1, t.numel()}), reshape(t_hat, {1, t_hat.numel()})));
}

Tensor orientation_loss(const Tensor& r, const Tensor& r_hat) {
  Tensor unit = normalize(reshape(r_hat, {1, r_hat.numel()}));
  return l2_norm(sub(reshape(r, {1, r.numel()}), unit));
}

Tensor weighted_pose_loss(const Tensor& l_t, const Tensor& l_r, const Tensor& s_t, const Tensor& s_r) {
  Tensor term_t = add(mul(l_t, exp(neg(s_t))), s_t);
  Tensor term_r = add(mul(l_r, exp(neg(s_r))), s_r);
  return add(term_t, term_r);
}

Tensor pose_loss(const Tensor& t, const Tensor& t_hat, const Tensor& r, const Tensor& r_hat,
                 const Tensor& s_t, const Tensor& s_r) {
  return weighted_pose_loss(position_loss(t, t_hat), orientation_loss(r, r_hat), s_t, s_r);
}

Tensor scene_loss(const Tensor& y_onehot, const Tensor& y_hat) {
  if (y_onehot.numel() != y_hat.numel()) {
    throw DimensionError("scene_loss: label " + shape_str(y_onehot.shape()) + " vs prediction " +
                         shape_str(y_hat.shape()));
  }
  std::size_t ones = 0, hot = 0;
  auto y = y_onehot.data();
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 1.0) {
      ++ones;
      hot = j;
    } else if (y[j] != 0.0) {
      throw ContractError("scene_loss: label is not one-hot");
    }
  }
  if (ones != 1) throw ContractError("scene_loss: label is not one-hot");
  return neg(log(pick(y_hat, hot)));
}

Tensor scene_loss_from_logits(const Tensor& logits, std::size_t true_scene) {
  if (true_scene >= logits.numel()) throw ContractError("scene_loss: scene index out of range");
  return neg(pick(log_softmax_rows(reshape(logits, {1, logits.numel()})), true_scene));
}

Tensor qka_loss(std::span<const AttentionRecord> records, std::size_t layers, std::size_t heads) {
  if (layers == 0 || heads == 0) throw ContractError("qka_loss: layers and heads must be positive");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& r : records) {
    if (r.layer < 1 || r.layer > layers || r.head < 1 || r.head > heads) {
      throw ContractError("qka_loss: record (" + std::to_string(r.layer) + "," + std::to_string(r.head) +
                          ") outside " + std::to_string(layers) + " layers x " + std::to_string(heads) + " heads");
    }
    if (!seen.emplace(r.layer, r.head).second) throw ContractError("qka_loss: duplicate record");
    if (r.branch != records.front().branch) throw ContractError("qka_loss: records mix branches");
  }
  if (seen.size() != layers * heads) {
    throw ContractError("qka_loss: missing records, got " + std::to_string(seen.size()) + " of " +
                        std::to_string(layers * heads));
  }
  Tensor acc = centroid_distance(records[0]);
  for (std::size_t i = 1; i < records.size(); ++i) acc = add(acc, centroid_distance(records[i]));
  return scale(acc, 1.0 / static_cast<double>(layers * heads));
}

LossBreakdown combine_losses(const Tensor& l_pose, const Tensor& l_scene, const Tensor& l_qka_t,
                             const Tensor& l_qka_r, double lambda_aux) {
  LossBreakdown b;
  Tensor aux = scale(add(l_qka_t, l_qka_r), lambda_aux);
  b.total = add(add(l_pose, l_scene), aux);
  b.l_pose = l_pose.item();
  b.l_scene = l_scene.item();
  b.l_qka_t = l_qka_t.item();
  b.l_qka_r = l_qka_r.item();
  b.l_aux = aux.item();
  b.l_total = b.total.item();
  b.lambda_aux = lambda_aux;
  return b;
}

LossBreakdown total_loss(const ModelOutput& output, const Pose& truth, std::size_t true_scene,
                         const LossParams& params, const LossConfig& config, const ModelConfig& model) {
  Tensor t = Tensor({1, 3}, {truth.t.begin(), truth.t.end()});
  Tensor r = Tensor({1, 4}, {truth.r.begin(), truth.r.end()});
  Tensor l_t = position_loss(t, output.t_hat);
  Tensor l_r = orientation_loss(r, output.r_hat);
  Tensor l_pose = weighted_pose_loss(l_t, l_r, params.s_t, params.s_r);
  Tensor l_scene = scene_loss_from_logits(output.scene_logits, true_scene);

  Tensor qka_t = Tensor::scalar(0.0);
  Tensor qka_r = Tensor::scalar(0.0);
  if (!output.records.empty()) {
    std::vector<AttentionRecord> rec_t, rec_r;
    for (const auto& rec : output.records) {
      (rec.branch == BranchKind::Position ? rec_t : rec_r).push_back(rec);
    }
    qka_t = qka_loss(rec_t, model.layers, model.heads);
    qka_r = qka_loss(rec_r, model.layers, model.heads);
  }
  LossBreakdown b = combine_losses(l_pose, l_scene, qka_t, qka_r, config.qka_enabled ? config.lambda_aux : 0.0);
  b.l_t = l_t.item();
  b.l_r = l_r.item();
  b.s_t = params.s_t.item();
  b.s_r = params.s_r.item();
  return b;
}

}  // namespace qkalign
