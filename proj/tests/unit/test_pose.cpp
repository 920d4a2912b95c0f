#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "qkalign/error.hpp"
#include "qkalign/pose.hpp"

using namespace qkalign;

TEST_CASE("position error") {
  CHECK(position_error({0, 0, 0}, {0, 0, 0}) == 0.0);
  CHECK(position_error({0, 0, 0}, {3, 4, 0}) == 5.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Vec3 a{n(rng), n(rng), n(rng)}, b{n(rng), n(rng), n(rng)};
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    CHECK(position_error(a, b) == doctest::Approx(std::sqrt(dx * dx + dy * dy + dz * dz)).epsilon(1e-14));
  }
}

TEST_CASE("orientation error") {
  const Quat q{0.5, -0.5, 0.5, 0.5};
  CHECK(orientation_error_deg(q, q) == doctest::Approx(0.0));
  CHECK(orientation_error_deg(q, {-0.5, 0.5, -0.5, -0.5}) == doctest::Approx(0.0));
  const double c = std::cos(std::numbers::pi / 4), s = std::sin(std::numbers::pi / 4);
  CHECK(orientation_error_deg({1, 0, 0, 0}, {c, s, 0, 0}) == doctest::Approx(90.0).epsilon(1e-12));
  // Scale of the prediction does not matter.
  CHECK(orientation_error_deg({1, 0, 0, 0}, {3 * c, 3 * s, 0, 0}) == doctest::Approx(90.0).epsilon(1e-12));
  CHECK_THROWS_AS(orientation_error_deg({1, 0, 0, 0}, {0, 0, 0, 0}), DomainError);
}

TEST_CASE("orientation error is symmetric and sign-invariant") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    auto a = random_unit_quaternion(rng), b = random_unit_quaternion(rng);
    const double e = orientation_error_deg(a, b);
    CHECK(e >= 0.0);
    CHECK(e <= 180.0);
    CHECK(orientation_error_deg(b, a) == doctest::Approx(e).epsilon(1e-12));
    Quat nb{-b[0], -b[1], -b[2], -b[3]};
    CHECK(orientation_error_deg(a, nb) == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("orientation error equals the rotation angle of the relative rotation") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, std::numbers::pi);
  for (int i = 0; i < 100; ++i) {
    auto a = random_unit_quaternion(rng);
    const double angle = u(rng);
    auto b = quat_multiply(a, quat_from_axis_angle({0.3, -0.4, 0.866}, angle));
    CHECK(orientation_error_deg(a, b) == doctest::Approx(angle * 180.0 / std::numbers::pi).epsilon(1e-9));
  }
}

TEST_CASE("median") {
  const double one[] = {3};
  CHECK(median(one) == 3.0);
  const double four[] = {4, 1, 3, 2};
  CHECK(median(four) == 2.5);
  CHECK_THROWS_AS(median(std::span<const double>{}), ContractError);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(101 + trial % 2);
    for (auto& x : v) x = n(rng);
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(median(v) == oracle::median_by_sort(v));
  }
}

TEST_CASE("recall") {
  std::vector<PoseError> zero(5);
  CHECK(recall_at(zero, 0.1, 1.0) == 1.0);
  std::vector<PoseError> big(5, PoseError{10.0, 90.0});
  CHECK(recall_at(big, 0.1, 1.0) == 0.0);
  CHECK_THROWS_AS(recall_at(std::span<const PoseError>{}, 0.1, 1.0), ContractError);

  const std::vector<PoseError> mixed = {{0.1, 1}, {0.3, 2}, {0.2, 20}, {0.25, 5}, {0.5, 0.5},
                                        {0.05, 9.9}, {0.2, 10}, {1.0, 1}, {0.19, 4}, {0.21, 3}};
  // Counted by hand: position <= 0.2 and angle <= 5 holds for entries 0, 8.
  CHECK(recall_at(mixed, 0.2, 5.0) == 0.2);
  // <= 0.2 and <= 10: entries 0, 5, 6, 8.
  CHECK(recall_at(mixed, 0.2, 10.0) == 0.4);
}

TEST_CASE("recall is monotone in both thresholds") {
  std::mt19937_64 rng(8);
  std::exponential_distribution<double> ex(1.0);
  std::vector<PoseError> errs(300);
  for (auto& e : errs) e = {ex(rng), 20 * ex(rng)};
  double prev_row = 0.0;
  for (double tp = 0.05; tp < 3.0; tp += 0.1) {
    double prev = 0.0;
    for (double ta = 1.0; ta < 60.0; ta += 3.0) {
      const double r = recall_at(errs, tp, ta);
      CHECK(r >= prev);
      prev = r;
    }
    const double row = recall_at(errs, tp, 30.0);
    CHECK(row >= prev_row);
    prev_row = row;
  }
}

TEST_CASE("uniform quaternions have zero mean rotation trace") {
  std::mt19937_64 rng(123);
  double trace = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    auto q = random_unit_quaternion(rng);
    CHECK(std::abs(quat_norm(q) - 1.0) < 1e-12);
    auto m = rotation_matrix(q);
    trace += m[0][0] + m[1][1] + m[2][2];
  }
  CHECK(std::abs(trace / n) < 0.05);
}
