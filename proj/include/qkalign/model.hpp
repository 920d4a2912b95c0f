#pragma once

// Dual-branch pose transformer: a position branch and an orientation branch,
// each with a token stem, an encoder stack, a decoder stack over learnable
// scene queries, and a pose regressor. A shared linear head scores each
// scene from its concatenated decoder rows.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qkalign/positional.hpp"
#include "qkalign/synth.hpp"
#include "qkalign/tensor.hpp"

namespace qkalign {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t layers = 6;
  std::size_t scenes = 8;
  GridSize grid_t{7, 7};
  GridSize grid_r{14, 14};
  std::size_t mlp_hidden = 128;
  std::size_t regressor_hidden = 128;
  PeKind pe_kind = PeKind::Learnable;
  bool encoder_sa_enabled = true;
  double ln_eps = 1e-5;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
};

enum class BranchKind { Position, Orientation };

std::string to_string(BranchKind branch);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
};

struct FeedForward {
  Linear hidden;
  Linear output;
};

struct EncoderLayerParams {
  AttentionParams attn;
  LayerNormParams norm1;
  FeedForward ffn;
  LayerNormParams norm2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  AttentionParams cross_attn;
  LayerNormParams norm2;
  FeedForward ffn;
  LayerNormParams norm3;
};

struct BranchParams {
  Linear stem;
  PosEncoding pe;
  std::vector<EncoderLayerParams> encoder;
  Tensor scene_queries;  // [M x D]
  std::vector<DecoderLayerParams> decoder;
  FeedForward regressor;
};

// Per-head snapshot of one encoder self-attention. q and k stay attached to
// the graph so losses on them reach the projection weights.
struct AttentionRecord {
  BranchKind branch = BranchKind::Position;
  std::size_t layer = 1;  // 1-based
  std::size_t head = 1;   // 1-based
  Tensor q;               // [N x d_h]
  Tensor k;               // [N x d_h]
  Tensor a;               // [N x N]
};

// ‖mean_rows(q) - mean_rows(k)‖₂ as a graph scalar. The QKA loss and the
// region-distance diagnostic both go through here.
Tensor centroid_distance(const Tensor& q, const Tensor& k);
Tensor centroid_distance(const AttentionRecord& record);

struct AttentionResult {
  Tensor output;              // [N x D]
  std::vector<Tensor> q;      // per head
  std::vector<Tensor> k;      // per head
  std::vector<Tensor> maps;   // per head
};

// softmax(Q_h K_hᵀ / sqrt(D/H)) V_h per head, concatenated and projected.
AttentionResult multi_head_attention(const Tensor& query_input, const Tensor& key_input,
                                     const Tensor& value_input, const AttentionParams& params,
                                     std::size_t heads);

struct EncoderOutput {
  Tensor tokens;
  std::vector<AttentionRecord> records;
};

// Positional signal enters the query/key inputs only. An undefined pe_table
// means no positional signal.
EncoderOutput self_attention(const Tensor& x, const Tensor& pe_table, const AttentionParams& params,
                             std::size_t heads, BranchKind branch, std::size_t layer);

// Post-norm: y = LN1(x + SA(x)), x' = LN2(y + FFN(y)). With self-attention
// disabled the first sublayer is skipped entirely.
EncoderOutput encoder_layer(const Tensor& x, const Tensor& pe_table, const EncoderLayerParams& params,
                            std::size_t heads, BranchKind branch, std::size_t layer,
                            bool self_attention_enabled, double ln_eps = 1e-5);

// z1 = LN1(z + SA(z)); z2 = LN2(z1 + CA(z1, memory + pe, memory)); z' = LN3(z2 + FFN(z2)).
Tensor decoder_layer(const Tensor& z, const Tensor& memory, const Tensor& pe_table,
                     const DecoderLayerParams& params, std::size_t heads, double ln_eps = 1e-5);

Tensor feed_forward(const Tensor& x, const FeedForward& params);

struct ForwardMode {
  bool train = false;
  std::size_t scene = 0;

  static ForwardMode training(std::size_t scene) { return {true, scene}; }
  static ForwardMode inference() { return {false, 0}; }
};

struct ModelOutput {
  Tensor scene_logits;  // [1 x M]
  Tensor t_hat;         // [1 x 3]
  Tensor r_hat;         // [1 x 4]
  std::vector<AttentionRecord> records;
  Tensor z_t;  // [M x D]
  Tensor z_r;  // [M x D]
  std::size_t selected_scene = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class PoseTransformer {
 public:
  PoseTransformer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  ModelOutput forward(const SyntheticObservation& obs, ForwardMode mode) const;

  // Every trainable tensor with a stable name, in a fixed order. The fixed
  // sinusoidal tables are not included.
  std::vector<NamedTensor> parameters() const;
  // Parameters of the position branch only (stem, encoding, encoder,
  // decoder, queries, regressor).
  std::vector<NamedTensor> position_branch_parameters() const;

  BranchParams& branch(BranchKind kind) { return kind == BranchKind::Position ? t_ : r_; }
  const BranchParams& branch(BranchKind kind) const { return kind == BranchKind::Position ? t_ : r_; }
  Linear& classifier() { return classifier_; }
  const Linear& classifier() const { return classifier_; }

 private:
  struct BranchResult {
    Tensor decoded;  // [M x D]
    std::vector<AttentionRecord> records;
  };
  BranchResult run_branch(const BranchParams& branch, const Tensor& tokens, BranchKind kind) const;

  ModelConfig config_;
  BranchParams t_;
  BranchParams r_;
  Linear classifier_;  // [2D -> 1], shared across scenes
};

void collect_branch_parameters(const BranchParams& branch, const std::string& prefix,
                               std::vector<NamedTensor>& out);

}  // namespace qkalign
