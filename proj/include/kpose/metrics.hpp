#pragma once

#include <span>
#include <vector>

#include "kpose/geometry.hpp"

namespace kpose {

/// Global symmetries of an object in its own frame. Identity is always present.
struct SymmetrySet {
  std::vector<RigidTransform> transforms{RigidTransform::identity()};

  /// Adds identity when the list lacks it.
  static SymmetrySet from(std::vector<RigidTransform> transforms);
  void validate() const;
};

struct ModelPoints {
  Points3 points;

  /// Deterministic stride subsampling down to at most max_points vertices.
  static ModelPoints subsampled(const Points3& vertices, Eigen::Index max_points = 10000);
  void validate() const;
};

/// Angle of R1^T R2, i.e. |log(R1^T R2)|_F / sqrt(2), in radians.
double rotation_geodesic(const Rotation& r1, const Rotation& r2);

double translation_error(const Vec3& t1, const Vec3& t2);

/// min over symmetries of max over vertices |est(x) - gt(sym(x))|, meters.
double mssd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym);

/// Same with pixel distances between projections. Throws BehindCamera naming
/// the pose ("estimate" or "ground truth") that puts a vertex behind the camera.
double mspd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym, const CameraIntrinsics& k);

/// Mean over thresholds of the fraction of errors <= threshold.
double recall_at_thresholds(std::span<const double> errors, std::span<const double> thresholds);

/// Median of the finite values; NaN when none.
double median(std::vector<double> values);

namespace serial {
double mssd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym);
double mspd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym, const CameraIntrinsics& k);
}  // namespace serial

}  // namespace kpose
