#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qkalign/error.hpp"
#include "qkalign/objectives.hpp"

using namespace qkalign;

namespace {

Tensor row(std::initializer_list<double> v) { return Tensor({1, v.size()}, std::vector<double>(v)); }

AttentionRecord record(std::size_t layer, std::size_t head, Tensor q, Tensor k,
                       BranchKind branch = BranchKind::Position) {
  return {branch, layer, head, std::move(q), std::move(k), Tensor()};
}

}  // namespace

TEST_CASE("pose loss examples") {
  auto zero = Tensor::scalar(0.0);
  auto t = row({1, 2, 3});
  auto r = row({0.5, 0.5, 0.5, 0.5});
  CHECK(pose_loss(t, t, r, r, zero, zero).item() == doctest::Approx(0.0).epsilon(1e-15));
  // L_t = 1, L_r = 0
  CHECK(pose_loss(t, row({1, 2, 4}), r, r, zero, zero).item() == doctest::Approx(1.0).epsilon(1e-15));
  // L_t = 2, s_t = ln 2 -> 1 + ln 2
  const double ln2 = std::log(2.0);
  CHECK(pose_loss(t, row({1, 4, 3}), r, r, Tensor::scalar(ln2), zero).item() ==
        doctest::Approx(1.0 + ln2).epsilon(1e-14));
  // The orientation term normalizes the prediction first.
  CHECK(orientation_loss(r, row({2, 2, 2, 2})).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(orientation_loss(r, row({0, 0, 0, 0})), DomainError);
  // s-terms may push the pose loss below zero.
  CHECK(pose_loss(t, t, r, r, Tensor::scalar(-2.0), Tensor::scalar(-3.0)).item() == doctest::Approx(-5.0));
}

TEST_CASE("pose loss gradients reach the uncertainty weights") {
  std::mt19937_64 rng(1);
  auto t = oracle::random_tensor({1, 3}, rng, 1.0, false);
  auto th = oracle::random_tensor({1, 3}, rng);
  Tensor r({1, 4}, {0.5, -0.5, 0.5, 0.5});
  auto rh = oracle::random_tensor({1, 4}, rng);
  auto st = Tensor::scalar(0.3, true), sr = Tensor::scalar(-1.2, true);
  auto res = oracle::finite_difference_check([&] { return pose_loss(t, th, r, rh, st, sr); }, {th, rh, st, sr});
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("scene loss examples") {
  CHECK(scene_loss(row({0, 1, 0}), row({0, 1, 0})).item() == 0.0);
  std::vector<double> uni(8, 1.0 / 8.0), hot(8, 0.0);
  hot[5] = 1.0;
  CHECK(scene_loss(Tensor({1, 8}, hot), Tensor({1, 8}, uni)).item() == doctest::Approx(std::log(8.0)).epsilon(1e-15));
  CHECK(scene_loss(row({0, 1, 0}), row({0.7, 0.2, 0.1})).item() == doctest::Approx(-std::log(0.2)).epsilon(1e-15));
  CHECK_THROWS_AS(scene_loss(row({0, 1, 1}), row({0.2, 0.4, 0.4})), ContractError);
  CHECK_THROWS_AS(scene_loss(row({0, 0.5, 0}), row({0.2, 0.4, 0.4})), ContractError);
  CHECK_THROWS_AS(scene_loss(row({0, 0, 0}), row({0.2, 0.4, 0.4})), ContractError);
}

TEST_CASE("scene loss from logits equals the probability form") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = oracle::random_tensor({1, 5}, rng, 2.0, false);
    auto p = oracle::softmax(std::vector<double>(logits.data().begin(), logits.data().end()));
    const std::size_t k = static_cast<std::size_t>(trial % 5);
    std::vector<double> hot(5, 0.0);
    hot[k] = 1.0;
    CHECK(scene_loss_from_logits(logits, k).item() ==
          doctest::Approx(scene_loss(Tensor({1, 5}, hot), Tensor({1, 5}, p)).item()).epsilon(1e-12));
  }
}

TEST_CASE("qka loss examples") {
  std::mt19937_64 rng(3);
  auto q = oracle::random_tensor({4, 3}, rng, 1.0, false);
  std::vector<AttentionRecord> same = {record(1, 1, q, q)};
  CHECK(qka_loss(same, 1, 1).item() == 0.0);

  Tensor k = Tensor::matrix({{0, 0, 0}, {0, 0, 0}});
  Tensor q2 = Tensor::matrix({{6, 8, 0}, {0, 0, 0}});  // mean (3, 4, 0)
  std::vector<AttentionRecord> one = {record(1, 1, q2, k)};
  CHECK(qka_loss(one, 1, 1).item() == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("qka loss averages explicit centroid distances") {
  std::mt19937_64 rng(4);
  std::vector<AttentionRecord> recs;
  double expect = 0.0;
  for (std::size_t l = 1; l <= 2; ++l)
    for (std::size_t h = 1; h <= 2; ++h) {
      auto q = oracle::random_tensor({5, 3}, rng);
      auto k = oracle::random_tensor({5, 3}, rng);
      expect += oracle::centroid_gap(oracle::to_matrix(q), oracle::to_matrix(k));
      recs.push_back(record(l, h, q, k));
    }
  CHECK(qka_loss(recs, 2, 2).item() == doctest::Approx(expect / 4.0).epsilon(1e-13));

  std::vector<Tensor> leaves;
  for (auto& r : recs) {
    leaves.push_back(r.q);
    leaves.push_back(r.k);
  }
  auto res = oracle::finite_difference_check([&] { return qka_loss(recs, 2, 2); }, leaves);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("qka loss rejects incomplete record sets") {
  auto q = Tensor::matrix({{1, 2}});
  std::vector<AttentionRecord> missing = {record(1, 1, q, q), record(1, 2, q, q), record(2, 1, q, q)};
  CHECK_THROWS_AS(qka_loss(missing, 2, 2), ContractError);
  std::vector<AttentionRecord> dup = {record(1, 1, q, q), record(1, 1, q, q)};
  CHECK_THROWS_AS(qka_loss(dup, 1, 2), ContractError);
  std::vector<AttentionRecord> mixed = {record(1, 1, q, q), record(1, 2, q, q, BranchKind::Orientation)};
  CHECK_THROWS_AS(qka_loss(mixed, 1, 2), ContractError);
  CHECK_THROWS_AS(qka_loss(std::vector<AttentionRecord>{}, 1, 1), ContractError);
}

TEST_CASE("combination of the objective") {
  auto s = [](double v) { return Tensor::scalar(v); };
  auto b = combine_losses(s(1), s(2), s(0.5), s(0.5), 0.1);
  CHECK(b.l_total == doctest::Approx(3.1).epsilon(1e-15));
  CHECK(b.l_aux == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(b.l_total == b.l_pose + b.l_scene + b.l_aux);
  auto base = combine_losses(s(1.5), s(0.25), s(3), s(4), 0.0);
  CHECK(base.l_total == 1.75);
  CHECK(combine_losses(s(0), s(0), s(0), s(0), 0.1).l_total == 0.0);
}
