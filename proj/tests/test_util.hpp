#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "kpose/geometry.hpp"

namespace kpose::testing {

inline double deg(double rad) { return rad * 180.0 / std::numbers::pi; }
inline double rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Uniform on SO(3): normalized Gaussian quaternion.
inline Rotation random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return Rotation::unchecked(q.toRotationMatrix());
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Points3 random_points(std::mt19937_64& rng, Eigen::Index p, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Points3 out(3, p);
  for (Eigen::Index i = 0; i < p; ++i) out.col(i) = Vec3(n(rng), n(rng), n(rng));
  return out;
}

// Rotation by angle about axis, built without the library's exponential map.
inline Rotation axis_angle(const Vec3& axis, double angle) {
  return Rotation::unchecked(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
}

// Angle of R1^T R2 from the quaternion of the relative rotation.
inline double quaternion_angle(const Rotation& r1, const Rotation& r2) {
  Eigen::Quaterniond q(Mat3(r1.matrix().transpose() * r2.matrix()));
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

}  // namespace kpose::testing
