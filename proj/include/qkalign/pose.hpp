#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

namespace qkalign {

using Vec3 = std::array<double, 3>;
// (w, x, y, z)
using Quat = std::array<double, 4>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// Camera position t and camera-to-world orientation r.
struct Pose {
  Vec3 t{0.0, 0.0, 0.0};
  Quat r{1.0, 0.0, 0.0, 0.0};
};

struct PoseError {
  double position = 0.0;
  double angle_deg = 0.0;
};

double position_error(const Vec3& t, const Vec3& t_hat);

// Geodesic angle between the rotations, in degrees, in [0, 180]. Both inputs
// are normalized first, so q and -q compare equal.
double orientation_error_deg(const Quat& r, const Quat& r_hat);

PoseError pose_error(const Pose& truth, const Vec3& t_hat, const Quat& r_hat);

double median(std::span<const double> values);

// Fraction of samples with position <= thr_pos and angle <= thr_ang.
double recall_at(std::span<const PoseError> errors, double thr_pos, double thr_ang);

double quat_norm(const Quat& q);
Quat quat_normalize(const Quat& q);
// Representative with w >= 0 (same rotation).
Quat quat_canonical(const Quat& q);
Quat quat_multiply(const Quat& a, const Quat& b);
Mat3 rotation_matrix(const Quat& unit_q);
Quat quat_from_axis_angle(const Vec3& axis, double angle_rad);

// Haar-uniform rotation (Shoemake's subgroup algorithm).
Quat random_unit_quaternion(std::mt19937_64& rng);

}  // namespace qkalign
