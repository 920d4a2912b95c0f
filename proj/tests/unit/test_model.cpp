#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "qkalign/error.hpp"
#include "qkalign/model.hpp"

using namespace qkalign;

namespace {

Linear rand_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {oracle::random_tensor({in, out}, rng, 0.5), oracle::random_tensor({out}, rng, 0.2)};
}

AttentionParams rand_attention(std::size_t dim, std::mt19937_64& rng) {
  return {rand_linear(dim, dim, rng), rand_linear(dim, dim, rng), rand_linear(dim, dim, rng),
          rand_linear(dim, dim, rng)};
}

std::vector<Tensor> weights(const AttentionParams& p) {
  return {p.query.weight, p.query.bias, p.key.weight, p.key.bias,
          p.value.weight, p.value.bias, p.output.weight, p.output.bias};
}

LayerNormParams rand_norm(std::size_t dim, std::mt19937_64& rng) {
  auto g = oracle::random_tensor({dim}, rng, 0.3);
  for (auto& v : g.mutable_data()) v += 1.0;
  return {g, oracle::random_tensor({dim}, rng, 0.1)};
}

void check_close(const oracle::Matrix& want, const Tensor& got, double tol) {
  REQUIRE(got.rows() == want.size());
  REQUIRE(got.cols() == want[0].size());
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[0].size(); ++j) CHECK(std::abs(got.at(i, j) - want[i][j]) < tol);
}

ModelConfig micro_config() {
  ModelConfig c;
  c.dim = 16;
  c.heads = 4;
  c.layers = 2;
  c.scenes = 2;
  c.grid_t = {3, 3};
  c.grid_r = {3, 3};
  c.mlp_hidden = 24;
  c.regressor_hidden = 24;
  return c;
}

SyntheticObservation random_obs(const ModelConfig& c, std::mt19937_64& rng) {
  SyntheticObservation o;
  o.tokens_t = oracle::random_tensor({c.grid_t.count(), c.dim}, rng, 1.0, false);
  o.tokens_r = oracle::random_tensor({c.grid_r.count(), c.dim}, rng, 1.0, false);
  return o;
}

}  // namespace

TEST_CASE("self-attention over one token is the value path") {
  std::mt19937_64 rng(1);
  auto p = rand_attention(4, rng);
  auto x = oracle::random_tensor({1, 4}, rng, 1.0, false);
  auto out = self_attention(x, Tensor(), p, 2, BranchKind::Position, 1);
  for (const auto& r : out.records) CHECK(r.a.item() == 1.0);
  auto v = oracle::affine(oracle::to_matrix(x), p.value.weight, p.value.bias);
  check_close(oracle::affine(v, p.output.weight, p.output.bias), out.tokens, 1e-12);
}

TEST_CASE("zero query weights give uniform attention") {
  std::mt19937_64 rng(2);
  auto p = rand_attention(8, rng);
  p.query.weight = Tensor::zeros({8, 8});
  p.query.bias = Tensor::zeros({8});
  auto x = oracle::random_tensor({5, 8}, rng, 1.0, false);
  auto out = self_attention(x, Tensor(), p, 2, BranchKind::Orientation, 3);
  REQUIRE(out.records.size() == 2);
  for (const auto& r : out.records) {
    CHECK(r.branch == BranchKind::Orientation);
    CHECK(r.layer == 3);
    for (double a : r.a.data()) CHECK(a == doctest::Approx(0.2).epsilon(1e-14));
  }
}

TEST_CASE("self-attention matches a dense evaluation") {
  std::mt19937_64 rng(3);
  for (std::size_t heads : {1u, 2u}) {
    auto p = rand_attention(4, rng);
    auto x = oracle::random_tensor({3, 4}, rng, 1.0, false);
    auto pe = oracle::random_tensor({3, 4}, rng, 1.0, false);
    auto out = self_attention(x, pe, p, heads, BranchKind::Position, 1);
    auto w = weights(p);
    auto xm = oracle::to_matrix(x);
    auto qk = oracle::add(xm, oracle::to_matrix(pe));
    auto ref = oracle::attention(qk, qk, xm, w.data(), heads);
    check_close(ref.out, out.tokens, 1e-10);
    for (std::size_t h = 0; h < heads; ++h) {
      check_close(ref.q[h], out.records[h].q, 1e-12);
      check_close(ref.k[h], out.records[h].k, 1e-12);
      check_close(ref.a[h], out.records[h].a, 1e-12);
      CHECK(out.records[h].head == h + 1);
    }
  }
}

TEST_CASE("encoder layer matches a step-by-step composition") {
  std::mt19937_64 rng(4);
  EncoderLayerParams p{rand_attention(4, rng), rand_norm(4, rng), {rand_linear(4, 6, rng), rand_linear(6, 4, rng)},
                       rand_norm(4, rng)};
  auto x = oracle::random_tensor({2, 4}, rng, 1.0, false);
  auto pe = oracle::random_tensor({2, 4}, rng, 1.0, false);
  auto out = encoder_layer(x, pe, p, 2, BranchKind::Position, 1, true);
  CHECK(out.records.size() == 2);

  auto xm = oracle::to_matrix(x);
  auto qk = oracle::add(xm, oracle::to_matrix(pe));
  auto w = weights(p.attn);
  auto sa = oracle::attention(qk, qk, xm, w.data(), 2);
  auto y = oracle::ln_rows(oracle::add(xm, sa.out), p.norm1.gamma, p.norm1.beta, 1e-5);
  auto h = oracle::gelu(oracle::affine(y, p.ffn.hidden.weight, p.ffn.hidden.bias));
  auto f = oracle::affine(h, p.ffn.output.weight, p.ffn.output.bias);
  auto ref = oracle::ln_rows(oracle::add(y, f), p.norm2.gamma, p.norm2.beta, 1e-5);
  check_close(ref, out.tokens, 1e-10);
}

TEST_CASE("encoder layer with zeroed sublayers is LN(LN(x))") {
  std::mt19937_64 rng(5);
  auto zero_lin = [](std::size_t in, std::size_t out) { return Linear{Tensor::zeros({in, out}), Tensor::zeros({out})}; };
  auto one = Tensor::filled({4}, 1.0), zero = Tensor::zeros({4});
  EncoderLayerParams p{rand_attention(4, rng), {one, zero}, {zero_lin(4, 6), zero_lin(6, 4)}, {one, zero}};
  p.attn.output = zero_lin(4, 4);
  auto x = oracle::random_tensor({3, 4}, rng, 1.0, false);
  auto out = encoder_layer(x, Tensor(), p, 2, BranchKind::Position, 1, true);
  auto ref = oracle::ln_rows(oracle::ln_rows(oracle::to_matrix(x), one, zero, 1e-5), one, zero, 1e-5);
  check_close(ref, out.tokens, 1e-12);
  CHECK(out.tokens.shape() == x.shape());
}

TEST_CASE("encoder layer without self-attention skips the first sublayer") {
  std::mt19937_64 rng(6);
  EncoderLayerParams p{rand_attention(4, rng), rand_norm(4, rng), {rand_linear(4, 6, rng), rand_linear(6, 4, rng)},
                       rand_norm(4, rng)};
  auto x = oracle::random_tensor({3, 4}, rng, 1.0, false);
  auto out = encoder_layer(x, Tensor(), p, 2, BranchKind::Position, 1, false);
  CHECK(out.records.empty());
  auto xm = oracle::to_matrix(x);
  auto f = oracle::affine(oracle::gelu(oracle::affine(xm, p.ffn.hidden.weight, p.ffn.hidden.bias)),
                          p.ffn.output.weight, p.ffn.output.bias);
  check_close(oracle::ln_rows(oracle::add(xm, f), p.norm2.gamma, p.norm2.beta, 1e-5), out.tokens, 1e-10);
}

TEST_CASE("decoder layer matches a dense evaluation") {
  std::mt19937_64 rng(7);
  DecoderLayerParams p{rand_attention(4, rng), rand_norm(4, rng), rand_attention(4, rng), rand_norm(4, rng),
                       {rand_linear(4, 8, rng), rand_linear(8, 4, rng)}, rand_norm(4, rng)};
  auto z = oracle::random_tensor({2, 4}, rng, 1.0, false);
  auto mem = oracle::random_tensor({3, 4}, rng, 1.0, false);
  auto pe = oracle::random_tensor({3, 4}, rng, 1.0, false);
  auto got = decoder_layer(z, mem, pe, p, 2);

  auto zm = oracle::to_matrix(z), mm = oracle::to_matrix(mem);
  auto ws = weights(p.self_attn), wc = weights(p.cross_attn);
  auto z1 = oracle::ln_rows(oracle::add(zm, oracle::attention(zm, zm, zm, ws.data(), 2).out), p.norm1.gamma,
                            p.norm1.beta, 1e-5);
  auto keys = oracle::add(mm, oracle::to_matrix(pe));
  auto z2 = oracle::ln_rows(oracle::add(z1, oracle::attention(z1, keys, mm, wc.data(), 2).out), p.norm2.gamma,
                            p.norm2.beta, 1e-5);
  auto f = oracle::affine(oracle::gelu(oracle::affine(z2, p.ffn.hidden.weight, p.ffn.hidden.bias)),
                          p.ffn.output.weight, p.ffn.output.bias);
  check_close(oracle::ln_rows(oracle::add(z2, f), p.norm3.gamma, p.norm3.beta, 1e-5), got, 1e-10);
}

TEST_CASE("cross-attention over identical memory tokens returns their value") {
  std::mt19937_64 rng(8);
  auto p = rand_attention(4, rng);
  auto row = oracle::random_tensor({1, 4}, rng, 1.0, false);
  std::vector<double> rep;
  for (int i = 0; i < 5; ++i) rep.insert(rep.end(), row.data().begin(), row.data().end());
  Tensor mem({5, 4}, rep);
  auto z = oracle::random_tensor({3, 4}, rng, 1.0, false);
  auto res = multi_head_attention(z, mem, mem, p, 2);
  auto v = oracle::affine(oracle::to_matrix(row), p.value.weight, p.value.bias);
  auto o = oracle::affine(v, p.output.weight, p.output.bias);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(res.output.at(i, j) - o[0][j]) < 1e-12);
}

TEST_CASE("forward shapes, records and attention validity") {
  auto c = micro_config();
  PoseTransformer m(c, 9);
  std::mt19937_64 rng(10);
  auto obs = random_obs(c, rng);
  auto out = m.forward(obs, ForwardMode::training(1));
  CHECK(out.scene_logits.numel() == 2);
  CHECK(out.t_hat.numel() == 3);
  CHECK(out.r_hat.numel() == 4);
  CHECK(out.z_t.shape() == Shape{2, 16});
  CHECK(out.selected_scene == 1);
  CHECK(out.records.size() == 2 * c.layers * c.heads);
  for (const auto& r : out.records) {
    CHECK(r.q.shape() == Shape{9, 4});
    for (std::size_t i = 0; i < r.a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.a.cols(); ++j) {
        CHECK(r.a.at(i, j) >= 0.0);
        CHECK(r.a.at(i, j) <= 1.0);
        s += r.a.at(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(m.forward(obs, ForwardMode::training(2)), ContractError);
  SyntheticObservation bad = obs;
  bad.tokens_t = Tensor::zeros({8, 16});
  CHECK_THROWS_AS(m.forward(bad, ForwardMode::inference()), DimensionError);
}

TEST_CASE("inference regresses from the argmax scene row") {
  auto c = micro_config();
  PoseTransformer m(c, 11);
  std::mt19937_64 rng(12);
  auto obs = random_obs(c, rng);
  std::set<std::size_t> picked;
  for (int round = 0; round < 2; ++round) {
    auto infer = m.forward(obs, ForwardMode::inference());
    auto forced = m.forward(obs, ForwardMode::training(infer.selected_scene));
    CHECK(infer.t_hat.data()[0] == forced.t_hat.data()[0]);
    CHECK(infer.r_hat.data()[3] == forced.r_hat.data()[3]);
    const auto logits = infer.scene_logits.data();
    CHECK(logits[infer.selected_scene] > logits[1 - infer.selected_scene]);
    picked.insert(infer.selected_scene);
    // Negated weights reverse the ranking of the two scene rows.
    for (auto& w : m.classifier().weight.mutable_data()) w = -w;
  }
  CHECK(picked.size() == 2);
}

TEST_CASE("encoder is equivariant to joint token and encoding permutations") {
  std::mt19937_64 rng(13);
  EncoderLayerParams p{rand_attention(8, rng), rand_norm(8, rng), {rand_linear(8, 12, rng), rand_linear(12, 8, rng)},
                       rand_norm(8, rng)};
  auto x = oracle::random_tensor({6, 8}, rng, 1.0, false);
  auto pe = oracle::random_tensor({6, 8}, rng, 1.0, false);
  const std::size_t perm[] = {3, 0, 5, 1, 4, 2};
  auto permute = [&](const Tensor& t) {
    std::vector<double> v;
    for (auto i : perm) v.insert(v.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * 8),
                                 t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * 8));
    return Tensor({6, 8}, v);
  };
  auto a = encoder_layer(x, pe, p, 2, BranchKind::Position, 1, true).tokens;
  auto b = encoder_layer(permute(x), permute(pe), p, 2, BranchKind::Position, 1, true).tokens;
  auto pa = permute(a);
  for (std::size_t i = 0; i < 48; ++i) CHECK(std::abs(pa.data()[i] - b.data()[i]) < 1e-12);
}

TEST_CASE("model construction is deterministic and names are unique") {
  auto c = micro_config();
  PoseTransformer a(c, 5), b(c, 5), d(c, 6);
  auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  REQUIRE(pa.size() == pb.size());
  std::set<std::string> names;
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    differs |= !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pd[i].tensor.data().begin());
    CHECK(names.insert(pa[i].name).second);
    CHECK(pa[i].tensor.requires_grad());
  }
  CHECK(differs);
  // Fixed encodings are constants, not parameters.
  c.pe_kind = PeKind::FixedSinusoidal;
  PoseTransformer f(c, 5);
  CHECK(f.parameters().size() == pa.size() - 2);
  for (const auto& p : f.position_branch_parameters()) CHECK(p.name.rfind("t.", 0) == 0);
}

TEST_CASE("config validation") {
  auto c = micro_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = micro_config();
  c.dim = 18;
  c.heads = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
