#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "kpose/geometry.hpp"
#include "kpose/heatmap.hpp"
#include "kpose/shape_model.hpp"

namespace kpose {

/// 2D detections W (pixels) with per-keypoint confidences d (diagonal of D).
struct KeypointObservations {
  Points2 w;
  Eigen::VectorXd d;
  std::vector<std::string> names;  // optional; empty or one per column

  Eigen::Index size() const { return w.cols(); }
  void validate() const;
  int count_above(double floor) const;
};

struct WeakPose {
  WeakCamera cam;
  ShapeCoefficients c;
};

struct FullPose {
  RigidTransform pose;
  ShapeCoefficients c;
  Eigen::VectorXd z;  // per-keypoint depth along its viewing ray
};

struct SolverConfig {
  double lambda = 1.0;            // Tikhonov weight on c
  double gamma = 0.0;             // spectral-norm weight of the convex init
  int max_iters = 1000;
  double rel_tol = 1e-9;          // stop when relative cost decrease falls below
  double line_search_shrink = 0.5;
  int max_line_search = 40;
  double coplanarity_tol = 1e-8;  // flag when lambda_min / lambda_max drops below
  double z_min = 0.01;            // meters
  int prox_iters = 200;

  void validate() const;
};

enum class Block { Init, Scale, Translation, Shape, Rotation, Depth };
const char* to_string(Block b);

struct TraceEntry {
  int iteration = 0;
  Block block = Block::Init;
  double cost = 0.0;
};
using Trace = std::vector<TraceEntry>;

struct SolveFlags {
  bool converged = false;
  bool ill_conditioned = false;
  bool behind_camera = false;  // depth clamp active in more than half the sweeps
  double condition_number = 1.0;
};

struct WeakSolution {
  WeakPose pose;
  double cost = 0.0;
  int iterations = 0;
  Trace trace;
  SolveFlags flags;
};

struct FullSolution {
  FullPose pose;
  double cost = 0.0;
  int iterations = 0;
  Trace trace;
  SolveFlags flags;
};

/// Raised when the objective becomes non-finite; carries the last finite iterate.
template <typename Pose>
class SolveFailure : public Error {
 public:
  SolveFailure(const std::string& what, Pose last)
      : Error(ErrorCode::NumericalFailure, what), last_(std::move(last)) {}
  const Pose& last_valid() const { return last_; }

 private:
  Pose last_;
};

/// 1/2 sum_i d_i |w_i - s rbar S_i - tbar|^2 + lambda/2 |c|^2.
double cost_weak(const KeypointObservations& obs, const ShapeBasis& basis,
                 const WeakPose& pose, double lambda);

/// 1/2 sum_i d_i |wn_i z_i - R S_i - T|^2 + lambda/2 |c|^2, wn normalized pixels.
double cost_full(const KeypointObservations& obs, const CameraIntrinsics& k,
                 const ShapeBasis& basis, const FullPose& pose, double lambda);

/// Riemannian gradient of cost_weak with respect to rbar on the manifold of
/// 2x3 row-orthonormal matrices (embedded metric).
Mat23 weak_rotation_gradient(const KeypointObservations& obs, const ShapeBasis& basis,
                             const WeakPose& pose);

struct WeakInit {
  WeakPose pose;
  double condition_number = 1.0;  // of the weighted shape scatter
};

/// Convex surrogate with c = 0: the 2x3 matrix M = s * rbar is unconstrained
/// and regularized by gamma * |M|_2; solved by proximal gradient (gamma > 0) or
/// weighted least squares (gamma = 0), then factored through its SVD.
///
/// Throws TooFewKeypoints with fewer than 4 weighted keypoints and
/// DegenerateInit when the weighted detections are collinear or M collapses.
WeakInit init_weak_convex_ex(const KeypointObservations& obs, const Points3& b0,
                             double gamma, const SolverConfig& cfg = {});

inline WeakPose init_weak_convex(const KeypointObservations& obs, const Points3& b0,
                                 double gamma, const SolverConfig& cfg = {}) {
  return init_weak_convex_ex(obs, b0, gamma, cfg).pose;
}

/// Block coordinate descent on s, tbar, c and rbar (Stiefel gradient step with
/// polar retraction and backtracking). Every block update is accepted only if
/// it does not increase the objective.
WeakSolution solve_weak(const KeypointObservations& obs, const ShapeBasis& basis,
                        const SolverConfig& cfg,
                        const std::optional<WeakPose>& init = std::nullopt);

/// Starting point of the full-perspective solver: R lifts rbar, T_z = f / s.
FullPose full_pose_from_weak(const WeakPose& weak, const KeypointObservations& obs,
                             const CameraIntrinsics& k, const ShapeBasis& basis,
                             const SolverConfig& cfg);

/// Alternates closed-form depths, weighted Procrustes for R, T and c.
FullSolution solve_full(const KeypointObservations& obs, const CameraIntrinsics& k,
                        const ShapeBasis& basis, const SolverConfig& cfg,
                        const WeakPose& init);

using ConfidenceTransform = std::function<double(double)>;

struct EstimateOptions {
  SolverConfig solver;
  double min_confidence = 0.01;  // keypoints counted as usable above this
  bool whiten_modes = true;      // solve in sqrt(eigenvalue)-scaled modes
  bool subpixel_peaks = false;
  ConfidenceTransform confidence_transform;  // raw confidence -> weight, for either source
};

struct PoseEstimate {
  KeypointObservations observations;
  WeakSolution weak;                  // c reported in the basis' own units
  std::optional<FullSolution> full;   // present iff intrinsics were given
  Eigen::VectorXd weak_residuals_px;
  Eigen::VectorXd full_residuals_px;  // NaN where a point falls behind the camera
};

using ObservationSource = std::variant<HeatmapStack, KeypointObservations>;

/// Peaks of a heatmap stack mapped to image pixels, confidence = peak value.
KeypointObservations observations_from_heatmaps(const HeatmapStack& stack,
                                                const EstimateOptions& opts = {});

/// init_weak_convex -> solve_weak -> solve_full (when intrinsics are given).
/// The full stage runs with lambda / s^2 so the regularizer keeps its
/// pixel-unit weight against the metric full-perspective residual.
PoseEstimate estimate_pose(const ObservationSource& source, const ShapeBasis& basis,
                           const std::optional<CameraIntrinsics>& k,
                           const EstimateOptions& opts = {});

}  // namespace kpose
