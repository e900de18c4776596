#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kpose/depth.hpp"
#include "kpose/geometry.hpp"
#include "kpose/heatmap.hpp"
#include "kpose/pose_solver.hpp"
#include "kpose/raster.hpp"
#include "kpose/shape_model.hpp"

namespace kpose {

struct NoiseModel {
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;   // rounded to a keypoint count per frame
  double inlier_confidence = 1.0;
  double outlier_confidence = 0.05;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  int frames = 10;
  NoiseModel noise;
  int instances = 20;           // training shapes for the PCA basis
  int modes = 2;
  double min_distance = 1.2;    // camera to object, meters
  double max_distance = 2.0;
  double drift_deg = 2.0;       // bound on the injected trajectory drift
  double drift_m = 0.03;
  int heatmap_scale = 4;        // image pixels per heatmap pixel
  CameraIntrinsics k{525.0, 525.0, 319.5, 239.5, 640, 480};

  void validate() const;
};

/// A box with a smaller box on top, ten keypoints on face interiors (at least
/// 2 cm from every edge) with their face normals.
struct SyntheticObject {
  SurfaceModel mesh;
  Keypoints3D keypoints;
};
SyntheticObject make_object();

/// Object plus a large ground plane under it, as seen by the depth sensor.
SurfaceModel make_scene(const SyntheticObject& object);

struct SyntheticFrame {
  int frame_id = 0;
  RigidTransform pose;          // object (fixed) frame -> camera
  RigidTransform drifted_pose;  // pose with injected drift
  ShapeCoefficients c;          // basis units
  Points3 shape;                // instantiate(basis, c)
  KeypointObservations obs;     // perspective projections with noise and outliers
  std::vector<bool> outlier;
};

struct SyntheticScenario {
  SynthConfig config;
  SyntheticObject object;
  std::vector<Points3> instances;
  ShapeBasis basis;
  std::vector<SyntheticFrame> frames;
};

/// Deterministic in the seed (mt19937_64).
SyntheticScenario make_scenario(const SynthConfig& cfg);

/// Weak-perspective camera matching a perspective pose to first order at the
/// object's origin: s = fx / T_z, rbar = top rows of R, tbar = projection of T.
/// Exact only for fx = fy.
WeakCamera weak_camera_of(const RigidTransform& pose, const CameraIntrinsics& k);

/// Noiseless observations of a frame under weak_camera_of(frame.pose).
KeypointObservations weak_observations(const SyntheticFrame& frame, const CameraIntrinsics& k);

/// One Gaussian channel per observation (sigma 1 heatmap pixel, amplitude =
/// confidence) on a grid downsampled by cfg.heatmap_scale.
HeatmapStack heatmaps_for(const KeypointObservations& obs, const SynthConfig& cfg);

/// Depth the sensor sees at the true pose.
DepthImage real_depth(const SyntheticScenario& sc, const SurfaceModel& scene, const SyntheticFrame& frame);

/// Writes the scenario directory: basis, instances, intrinsics, meshes,
/// keypoints, symmetries, observations, heatmaps, depth frames, trajectories
/// and ground truth. Frames are written in parallel.
void write_scenario(const SyntheticScenario& sc, const std::filesystem::path& dir, bool heatmaps = true,
                    bool depth = true);

}  // namespace kpose
