#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "kpose/error.hpp"

namespace kpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Points2 = Eigen::Matrix2Xd;
using Points3 = Eigen::Matrix3Xd;

/// Element of SO(3), stored as a 3x3 matrix.
///
/// Construction through from_matrix() validates orthonormality and det = +1
/// to 1e-9; the unchecked constructor is for values produced by this
/// library's own closed forms.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  static Rotation unchecked(const Mat3& m) { return Rotation(m); }
  /// Normalizes q before conversion.
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  /// Nearest rotation in Frobenius norm (SVD projection).
  static Rotation nearest(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  Eigen::Quaterniond to_quaternion() const;
  Rotation transpose() const { return Rotation(m_.transpose()); }
  Rotation inverse() const { return transpose(); }

  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Points3 operator*(const Points3& p) const { return m_ * p; }

  /// Top two rows, the weak-perspective part of the rotation.
  Mat23 top_rows() const { return m_.topRows<2>(); }

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

bool is_rotation(const Mat3& m, double tol = 1e-9);

/// x -> rotation * x + translation.
struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Points3 apply(const Points3& x) const {
    return (rotation.matrix() * x).colwise() + translation;
  }
  RigidTransform inverse() const {
    Rotation rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  /// (a * b)(x) = a(b(x)).
  RigidTransform operator*(const RigidTransform& b) const {
    return {rotation * b.rotation, rotation * b.translation + translation};
  }
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
};

/// Weak-perspective camera: pixels = s * rbar * X + tbar.
struct WeakCamera {
  double s = 1.0;
  Mat23 rbar = Mat23::Identity();
  Vec2 tbar = Vec2::Zero();

  void validate(double tol = 1e-9) const;
};

Rotation so3_exp(const Vec3& w);

struct So3Log {
  Vec3 omega;
  bool near_pi = false;  // angle within 1e-6 of pi; axis from the symmetric part
};

So3Log so3_log_checked(const Rotation& r);
inline Vec3 so3_log(const Rotation& r) { return so3_log_checked(r).omega; }

Mat3 hat(const Vec3& w);

/// argmin_R sum_i w_i |R a_i - b_i|^2 over SO(3).
///
/// The caller removes centroids if translation should not take part. Throws
/// DegenerateConfiguration when fewer than three columns carry weight or the
/// weighted cross-covariance has rank < 2.
Rotation orthogonal_procrustes(const Points3& a, const Points3& b,
                               const Eigen::VectorXd& w);

Points2 project_weak(const Points3& s, const WeakCamera& cam);

/// Pinhole projection of pose(S). Throws BehindCamera naming the first column
/// whose camera-frame depth is not positive.
Points2 project_full(const Points3& s, const RigidTransform& pose,
                     const CameraIntrinsics& k);

/// Columns ((u - cx) / fx, (v - cy) / fy, 1).
Points3 normalize_pixels(const Points2& w, const CameraIntrinsics& k);

/// Camera-frame points from pixels and per-column depths.
Points3 unproject(const Points2& w, const Eigen::VectorXd& depth,
                  const CameraIntrinsics& k);

/// Completes a row-orthonormal 2x3 matrix to a rotation with third row r1 x r2.
Rotation lift_rotation(const Mat23& rbar);

/// Nearest row-orthonormal 2x3 matrix (polar factor).
Mat23 polar_rows(const Mat23& m);

}  // namespace kpose
