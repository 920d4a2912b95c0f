#include "qkalign/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qkalign/error.hpp"

namespace qkalign {

double position_error(const Vec3& t, const Vec3& t_hat) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (t[i] - t_hat[i]) * (t[i] - t_hat[i]);
  return std::sqrt(s);
}

double quat_norm(const Quat& q) {
  return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

Quat quat_normalize(const Quat& q) {
  const double n = quat_norm(q);
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("quaternion has zero or non-finite norm");
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

Quat quat_canonical(const Quat& q) {
  return q[0] < 0.0 ? Quat{-q[0], -q[1], -q[2], -q[3]} : q;
}

double orientation_error_deg(const Quat& r, const Quat& r_hat) {
  const Quat a = quat_normalize(r);
  const Quat b = quat_normalize(r_hat);
  double dot = std::abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]);
  dot = std::clamp(dot, -1.0, 1.0);
  return 2.0 * std::acos(dot) * 180.0 / std::numbers::pi;
}

PoseError pose_error(const Pose& truth, const Vec3& t_hat, const Quat& r_hat) {
  return {position_error(truth.t, t_hat), orientation_error_deg(truth.r, r_hat)};
}

double median(std::span<const double> values) {
  if (values.empty()) throw ContractError("median: empty input");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double recall_at(std::span<const PoseError> errors, double thr_pos, double thr_ang) {
  if (errors.empty()) throw ContractError("recall_at: empty input");
  if (!(thr_pos > 0.0) || !(thr_ang > 0.0)) throw ContractError("recall_at: thresholds must be positive");
  std::size_t hits = 0;
  for (const auto& e : errors) {
    if (e.position <= thr_pos && e.angle_deg <= thr_ang) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

Quat quat_multiply(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Mat3 rotation_matrix(const Quat& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Quat quat_from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(n > 0.0)) throw DomainError("quat_from_axis_angle: zero axis");
  const double s = std::sin(0.5 * angle_rad) / n;
  return {std::cos(0.5 * angle_rad), axis[0] * s, axis[1] * s, axis[2] * s};
}

Quat random_unit_quaternion(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double two_pi = 2.0 * std::numbers::pi;
  Quat q{b * std::cos(two_pi * u3), a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
         b * std::sin(two_pi * u3)};
  return quat_normalize(q);
}

}  // namespace qkalign
