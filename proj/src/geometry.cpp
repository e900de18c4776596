#include "kpose/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <numbers>
#include <string>

namespace kpose {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::DegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::DegenerateInit: return "degenerate-init";
    case ErrorCode::BehindCamera: return "behind-camera";
    case ErrorCode::NumericalFailure: return "numerical-failure";
    case ErrorCode::TooFewKeypoints: return "too-few-keypoints";
    case ErrorCode::EmptyCrop: return "empty-crop";
    case ErrorCode::InsufficientOverlap: return "insufficient-overlap";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

bool is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!is_rotation(m, tol)) {
    throw Error(ErrorCode::InvalidArgument, "matrix is not a rotation");
  }
  return Rotation(m);
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  if (q.norm() == 0.0 || !q.coeffs().allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "quaternion must be finite and nonzero");
  }
  return Rotation(q.normalized().toRotationMatrix());
}

Rotation Rotation::nearest(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rotation(u * v.transpose());
}

Eigen::Quaterniond Rotation::to_quaternion() const {
  Eigen::Quaterniond q(m_);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  }
}

void WeakCamera::validate(double tol) const {
  if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "weak camera scale must be positive");
  if ((rbar * rbar.transpose() - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() > tol) {
    throw Error(ErrorCode::InvalidArgument, "weak camera rows are not orthonormal");
  }
}

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

Rotation so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = hat(w);
  if (theta < 1e-8) {
    // second-order Taylor, exact to rounding at this size
    return Rotation::unchecked(Mat3::Identity() + k + 0.5 * k * k);
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation::unchecked(Mat3::Identity() + a * k + b * k * k);
}

namespace {

Vec3 vee_skew(const Mat3& m) {
  return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

}  // namespace

So3Log so3_log_checked(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 v = vee_skew(m);  // sin(theta) * axis
  const double sin_theta = v.norm();
  const double cos_theta = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  So3Log out;
  if (theta < 1e-8) {
    out.omega = v;
    return out;
  }
  if (std::numbers::pi - theta >= 1e-6) {
    out.omega = (theta / sin_theta) * v;
    return out;
  }

  // Near pi the skew part vanishes; (R + I)/2 is approximately axis * axis^T.
  out.near_pi = true;
  const Mat3 b = 0.25 * (m + m.transpose()) + 0.5 * Mat3::Identity();
  Eigen::Index j = 0;
  b.diagonal().maxCoeff(&j);
  Vec3 axis = b.col(j) / std::sqrt(b(j, j));
  axis.normalize();
  if (sin_theta > 1e-10) {
    if (axis.dot(v) < 0.0) axis = -axis;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  out.omega = theta * axis;
  return out;
}

Rotation orthogonal_procrustes(const Points3& a, const Points3& b,
                               const Eigen::VectorXd& w) {
  if (a.cols() != b.cols() || a.cols() != w.size()) {
    throw Error(ErrorCode::DimensionMismatch, "procrustes inputs differ in column count");
  }
  if (a.cols() < 3) {
    throw Error(ErrorCode::DegenerateConfiguration, "procrustes needs at least 3 points");
  }
  if ((w.array() < 0.0).any()) {
    throw Error(ErrorCode::InvalidArgument, "procrustes weights must be nonnegative");
  }
  const Mat3 h = b * w.asDiagonal() * a.transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "weighted cross-covariance has rank < 2");
  }
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rotation::unchecked(u * v.transpose());
}

Points2 project_weak(const Points3& s, const WeakCamera& cam) {
  return ((cam.s * cam.rbar) * s).colwise() + cam.tbar;
}

Points2 project_full(const Points3& s, const RigidTransform& pose,
                     const CameraIntrinsics& k) {
  const Points3 c = pose.apply(s);
  Points2 out(2, c.cols());
  for (Eigen::Index i = 0; i < c.cols(); ++i) {
    const double z = c(2, i);
    if (!(z > 0.0)) {
      throw Error(ErrorCode::BehindCamera,
                  "point " + std::to_string(i) + " has nonpositive depth");
    }
    out(0, i) = k.fx * c(0, i) / z + k.cx;
    out(1, i) = k.fy * c(1, i) / z + k.cy;
  }
  return out;
}

Points3 normalize_pixels(const Points2& w, const CameraIntrinsics& k) {
  Points3 out(3, w.cols());
  out.row(0) = (w.row(0).array() - k.cx) / k.fx;
  out.row(1) = (w.row(1).array() - k.cy) / k.fy;
  out.row(2).setOnes();
  return out;
}

Points3 unproject(const Points2& w, const Eigen::VectorXd& depth,
                  const CameraIntrinsics& k) {
  if (depth.size() != w.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one depth per pixel required");
  }
  return normalize_pixels(w, k) * depth.asDiagonal();
}

Rotation lift_rotation(const Mat23& rbar) {
  Mat3 m;
  m.topRows<2>() = rbar;
  m.row(2) = rbar.row(0).cross(rbar.row(1));
  return Rotation::unchecked(m);
}

Mat23 polar_rows(const Mat23& m) {
  Eigen::JacobiSVD<Mat23> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().leftCols<2>().transpose();
}

}  // namespace kpose
