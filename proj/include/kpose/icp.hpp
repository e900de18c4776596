#pragma once

#include "kpose/depth.hpp"
#include "kpose/geometry.hpp"

namespace kpose {

struct IcpConfig {
  int max_iters = 30;
  double corr_dist = 0.10;          // meters
  double rel_tol = 1e-6;
  double degeneracy_ratio = 1e-6;   // lambda_min / lambda_max of the 6x6 system
  int max_step_halvings = 5;
};

struct IcpResult {
  RigidTransform transform;   // maps source points onto the target
  double initial_error = 0.0;
  double final_error = 0.0;
  int iterations = 0;
  int correspondences = 0;    // at the final transform
  bool converged = false;
  bool degenerate = false;    // some motion was unobservable in some iteration
};

/// Truncated point-to-plane error of transform applied to src: the mean over
/// source points of (n^T (T p - q))^2 against the nearest target within
/// corr_dist, corr_dist^2 for points without one.
double point_to_plane_error(const Points3& src, const PointCloud& tgt, const RigidTransform& t,
                            double corr_dist);

/// Point-to-plane ICP with small-angle linearization. Each iteration solves
/// the 6x6 normal equations (rotation, translation) and accepts the step only
/// if the truncated error does not grow, halving it otherwise.
///
/// Throws InsufficientOverlap with fewer than 6 correspondences and
/// InvalidArgument when the target lacks normals.
IcpResult icp_point_to_plane(const Points3& src, const PointCloud& tgt, const RigidTransform& init,
                             const IcpConfig& cfg = {});

}  // namespace kpose
