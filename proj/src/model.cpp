#include "qkalign/model.hpp"

#include <cmath>

#include "qkalign/error.hpp"

namespace qkalign {

namespace {

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& v : w) v = u(rng);
  return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

LayerNormParams make_norm(std::size_t dim) {
  return {Tensor::filled({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

AttentionParams make_attention(std::size_t dim, std::mt19937_64& rng) {
  auto q = make_linear(dim, dim, rng);
  auto k = make_linear(dim, dim, rng);
  auto v = make_linear(dim, dim, rng);
  auto o = make_linear(dim, dim, rng);
  return {q, k, v, o};
}

FeedForward make_ffn(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
  auto h = make_linear(in, hidden, rng);
  auto o = make_linear(hidden, out, rng);
  return {h, o};
}

BranchParams make_branch(const ModelConfig& c, GridSize grid, std::size_t out_dim, std::mt19937_64& rng) {
  BranchParams b;
  b.stem = make_linear(c.dim, c.dim, rng);
  b.pe = c.pe_kind == PeKind::FixedSinusoidal ? build_sinusoidal_2d(grid, c.dim)
                                              : make_learnable_encoding(grid, c.dim, rng);
  for (std::size_t l = 0; l < c.layers; ++l) {
    EncoderLayerParams e;
    e.attn = make_attention(c.dim, rng);
    e.norm1 = make_norm(c.dim);
    e.ffn = make_ffn(c.dim, c.mlp_hidden, c.dim, rng);
    e.norm2 = make_norm(c.dim);
    b.encoder.push_back(std::move(e));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> queries(c.scenes * c.dim);
  for (auto& v : queries) v = normal(rng);
  b.scene_queries = Tensor({c.scenes, c.dim}, std::move(queries), true);
  for (std::size_t l = 0; l < c.layers; ++l) {
    DecoderLayerParams d;
    d.self_attn = make_attention(c.dim, rng);
    d.norm1 = make_norm(c.dim);
    d.cross_attn = make_attention(c.dim, rng);
    d.norm2 = make_norm(c.dim);
    d.ffn = make_ffn(c.dim, c.mlp_hidden, c.dim, rng);
    d.norm3 = make_norm(c.dim);
    b.decoder.push_back(std::move(d));
  }
  b.regressor = make_ffn(c.dim, c.regressor_hidden, out_dim, rng);
  return b;
}

void push_linear(std::vector<NamedTensor>& out, const std::string& name, const Linear& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

void push_norm(std::vector<NamedTensor>& out, const std::string& name, const LayerNormParams& n) {
  out.push_back({name + ".gamma", n.gamma});
  out.push_back({name + ".beta", n.beta});
}

void push_attention(std::vector<NamedTensor>& out, const std::string& name, const AttentionParams& a) {
  push_linear(out, name + ".query", a.query);
  push_linear(out, name + ".key", a.key);
  push_linear(out, name + ".value", a.value);
  push_linear(out, name + ".output", a.output);
}

void push_ffn(std::vector<NamedTensor>& out, const std::string& name, const FeedForward& f) {
  push_linear(out, name + ".hidden", f.hidden);
  push_linear(out, name + ".output", f.output);
}

Tensor as_matrix(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (!t.defined() || t.numel() != rows * cols) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " tokens, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("nothing")));
  }
  return t.rank() == 2 && t.rows() == rows ? t : reshape(t, {rows, cols});
}

}  // namespace

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || layers == 0 || scenes == 0) {
    throw ConfigError("model: dim, heads, layers and scenes must be positive");
  }
  if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
  if (dim % 4 != 0) throw ConfigError("model: dim must be divisible by 4");
  if (grid_t.count() == 0 || grid_r.count() == 0) throw ConfigError("model: grids must be non-empty");
  if (mlp_hidden == 0 || regressor_hidden == 0) throw ConfigError("model: hidden widths must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("model: ln_eps must be positive");
}

std::string to_string(BranchKind branch) { return branch == BranchKind::Position ? "t" : "r"; }

Tensor centroid_distance(const Tensor& q, const Tensor& k) {
  return l2_norm(sub(mean_rows(q), mean_rows(k)));
}

Tensor centroid_distance(const AttentionRecord& record) { return centroid_distance(record.q, record.k); }

AttentionResult multi_head_attention(const Tensor& query_input, const Tensor& key_input,
                                     const Tensor& value_input, const AttentionParams& params,
                                     std::size_t heads) {
  const std::size_t dim = params.query.weight.cols();
  if (heads == 0 || dim % heads != 0) throw ContractError("attention: dim must be divisible by heads");
  if (query_input.cols() != params.query.weight.rows() || key_input.cols() != params.key.weight.rows() ||
      value_input.cols() != params.value.weight.rows()) {
    throw DimensionError("attention: input width does not match projection weights");
  }
  if (key_input.rows() != value_input.rows()) {
    throw DimensionError("attention: key and value inputs need the same token count");
  }
  const std::size_t dh = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = params.query(query_input);
  Tensor k = params.key(key_input);
  Tensor v = params.value(value_input);

  AttentionResult result;
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor a = softmax_rows(scale(matmul_nt(qh, kh), inv_scale));
    outputs.push_back(matmul(a, vh));
    result.q.push_back(std::move(qh));
    result.k.push_back(std::move(kh));
    result.maps.push_back(std::move(a));
  }
  result.output = params.output(heads == 1 ? outputs[0] : concat_cols(outputs));
  return result;
}

EncoderOutput self_attention(const Tensor& x, const Tensor& pe_table, const AttentionParams& params,
                             std::size_t heads, BranchKind branch, std::size_t layer) {
  Tensor qk_input = x;
  if (pe_table.defined()) {
    if (pe_table.shape() != x.shape()) {
      throw DimensionError("self_attention: positional table " + shape_str(pe_table.shape()) +
                           " does not match tokens " + shape_str(x.shape()));
    }
    qk_input = add(x, pe_table);
  }
  auto attn = multi_head_attention(qk_input, qk_input, x, params, heads);
  EncoderOutput out;
  out.tokens = attn.output;
  for (std::size_t h = 0; h < heads; ++h) {
    out.records.push_back({branch, layer, h + 1, attn.q[h], attn.k[h], attn.maps[h]});
  }
  return out;
}

Tensor feed_forward(const Tensor& x, const FeedForward& params) {
  return params.output(gelu(params.hidden(x)));
}

EncoderOutput encoder_layer(const Tensor& x, const Tensor& pe_table, const EncoderLayerParams& params,
                            std::size_t heads, BranchKind branch, std::size_t layer,
                            bool self_attention_enabled, double ln_eps) {
  EncoderOutput out;
  Tensor y = x;
  if (self_attention_enabled) {
    auto sa = self_attention(x, pe_table, params.attn, heads, branch, layer);
    y = layer_norm(add(x, sa.tokens), params.norm1.gamma, params.norm1.beta, ln_eps);
    out.records = std::move(sa.records);
  }
  out.tokens = layer_norm(add(y, feed_forward(y, params.ffn)), params.norm2.gamma, params.norm2.beta, ln_eps);
  return out;
}

Tensor decoder_layer(const Tensor& z, const Tensor& memory, const Tensor& pe_table,
                     const DecoderLayerParams& params, std::size_t heads, double ln_eps) {
  auto sa = multi_head_attention(z, z, z, params.self_attn, heads);
  Tensor z1 = layer_norm(add(z, sa.output), params.norm1.gamma, params.norm1.beta, ln_eps);
  Tensor keys = pe_table.defined() ? add(memory, pe_table) : memory;
  auto ca = multi_head_attention(z1, keys, memory, params.cross_attn, heads);
  Tensor z2 = layer_norm(add(z1, ca.output), params.norm2.gamma, params.norm2.beta, ln_eps);
  return layer_norm(add(z2, feed_forward(z2, params.ffn)), params.norm3.gamma, params.norm3.beta, ln_eps);
}

// --- PoseTransformer ---------------------------------------------------------

PoseTransformer::PoseTransformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  t_ = make_branch(config_, config_.grid_t, 3, rng);
  r_ = make_branch(config_, config_.grid_r, 4, rng);
  classifier_ = make_linear(2 * config_.dim, 1, rng);
}

PoseTransformer::BranchResult PoseTransformer::run_branch(const BranchParams& branch, const Tensor& tokens,
                                                          BranchKind kind) const {
  BranchResult result;
  Tensor x = branch.stem(tokens);
  for (std::size_t l = 0; l < branch.encoder.size(); ++l) {
    auto enc = encoder_layer(x, branch.pe.table, branch.encoder[l], config_.heads, kind, l + 1,
                             config_.encoder_sa_enabled, config_.ln_eps);
    x = enc.tokens;
    for (auto& r : enc.records) result.records.push_back(std::move(r));
  }
  Tensor z = branch.scene_queries;
  for (const auto& layer : branch.decoder) {
    z = decoder_layer(z, x, branch.pe.table, layer, config_.heads, config_.ln_eps);
  }
  result.decoded = z;
  return result;
}

ModelOutput PoseTransformer::forward(const SyntheticObservation& obs, ForwardMode mode) const {
  if (mode.train && mode.scene >= config_.scenes) {
    throw ContractError("forward: scene index " + std::to_string(mode.scene) + " outside [0, " +
                        std::to_string(config_.scenes) + ")");
  }
  Tensor tok_t = as_matrix(obs.tokens_t, config_.grid_t.count(), config_.dim, "forward (position tokens)");
  Tensor tok_r = as_matrix(obs.tokens_r, config_.grid_r.count(), config_.dim, "forward (orientation tokens)");

  auto bt = run_branch(t_, tok_t, BranchKind::Position);
  auto br = run_branch(r_, tok_r, BranchKind::Orientation);

  ModelOutput out;
  const Tensor both[] = {bt.decoded, br.decoded};
  out.scene_logits = reshape(classifier_(concat_cols(both)), {1, config_.scenes});
  if (mode.train) {
    out.selected_scene = mode.scene;
  } else {
    auto logits = out.scene_logits.data();
    std::size_t best = 0;
    for (std::size_t m = 1; m < logits.size(); ++m) {
      if (logits[m] > logits[best]) best = m;
    }
    out.selected_scene = best;
  }
  out.t_hat = feed_forward(select_row(bt.decoded, out.selected_scene), t_.regressor);
  out.r_hat = feed_forward(select_row(br.decoded, out.selected_scene), r_.regressor);
  out.z_t = bt.decoded;
  out.z_r = br.decoded;
  out.records = std::move(bt.records);
  for (auto& r : br.records) out.records.push_back(std::move(r));
  return out;
}

void collect_branch_parameters(const BranchParams& b, const std::string& prefix, std::vector<NamedTensor>& out) {
  push_linear(out, prefix + ".stem", b.stem);
  if (b.pe.kind == PeKind::Learnable) out.push_back({prefix + ".pe", b.pe.table});
  for (std::size_t l = 0; l < b.encoder.size(); ++l) {
    const std::string p = prefix + ".enc." + std::to_string(l);
    push_attention(out, p + ".attn", b.encoder[l].attn);
    push_norm(out, p + ".norm1", b.encoder[l].norm1);
    push_ffn(out, p + ".ffn", b.encoder[l].ffn);
    push_norm(out, p + ".norm2", b.encoder[l].norm2);
  }
  out.push_back({prefix + ".scene_queries", b.scene_queries});
  for (std::size_t l = 0; l < b.decoder.size(); ++l) {
    const std::string p = prefix + ".dec." + std::to_string(l);
    push_attention(out, p + ".self_attn", b.decoder[l].self_attn);
    push_norm(out, p + ".norm1", b.decoder[l].norm1);
    push_attention(out, p + ".cross_attn", b.decoder[l].cross_attn);
    push_norm(out, p + ".norm2", b.decoder[l].norm2);
    push_ffn(out, p + ".ffn", b.decoder[l].ffn);
    push_norm(out, p + ".norm3", b.decoder[l].norm3);
  }
  push_ffn(out, prefix + ".regressor", b.regressor);
}

std::vector<NamedTensor> PoseTransformer::parameters() const {
  std::vector<NamedTensor> out;
  collect_branch_parameters(t_, "t", out);
  collect_branch_parameters(r_, "r", out);
  push_linear(out, "classifier", classifier_);
  return out;
}

std::vector<NamedTensor> PoseTransformer::position_branch_parameters() const {
  std::vector<NamedTensor> out;
  collect_branch_parameters(t_, "t", out);
  return out;
}

}  // namespace qkalign
