#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kpose/depth.hpp"
#include "kpose/geometry.hpp"
#include "kpose/icp.hpp"
#include "kpose/raster.hpp"
#include "kpose/shape_model.hpp"

namespace kpose {

enum class Visibility { Visible, Occluded };
enum class Refinement { None, JumpEdge, FeatureMatch, Icp };

const char* to_string(Visibility v);
const char* to_string(Refinement r);

struct ProjectedKeypoint {
  std::string name;
  Vec2 pixel = Vec2::Zero();
  Vec3 cam_point = Vec3::Zero();
  Vec3 cam_normal = Vec3::Zero();  // zero when the keypoint carries no normal
  Visibility visibility = Visibility::Visible;
  Refinement refinement = Refinement::None;
};

struct AnnotationFrame {
  int frame_id = 0;
  DepthImage real_depth;
  RigidTransform camera_pose;  // fixed frame -> camera
  CameraIntrinsics k;

  void validate() const;
};

struct AnnotationConfig {
  double tau = -0.15;               // occluded when view . normal > tau
  Vec3 view = Vec3::UnitZ();        // camera viewing direction
  double depth_slack = 0.02;        // meters
  double jump_threshold = 0.05;     // meters
  int jump_window = 11;             // pixels, square
  double search_radius_px = 15.0;
  double w_euclid = 0.7;
  double w_feat = 0.3;
  double fpfh_radius = 0.05;        // meters
  double dilation_fraction = 0.1;   // of the keypoint box diagonal
  double dilation_offset = 0.05;    // meters
  int normal_window = 5;
  int icp_stride = 2;               // pixel stride of the clouds fed to ICP
  IcpConfig icp;

  void validate() const;
};

/// Integer pixel a keypoint falls on, if it is in front of the camera and on the image.
std::optional<Eigen::Vector2i> keypoint_pixel(const ProjectedKeypoint& kp, int width, int height);

/// Camera-frame keypoints and their pinhole projections. Keypoints behind the
/// camera or off the image come back occluded; all others visible.
std::vector<ProjectedKeypoint> project_keypoints(const Keypoints3D& kps, const RigidTransform& camera_pose,
                                                 const CameraIntrinsics& k);

/// Z-buffer and normal test. Occluded when the keypoint is off-image, the
/// generated depth is missing, its depth exceeds generated depth + slack, or
/// view . normal > tau. A zero normal skips the normal test.
Visibility occlusion_test(const ProjectedKeypoint& kp, const DepthImage& gen_depth, const Vec3& normal_c,
                          const Vec3& view_c, double tau = -0.15, double depth_slack = 0.02);

/// Generated depth shallower than measured depth by more than threshold.
bool is_jump_edge(double gen, double real, double threshold);

/// On a jump edge, moves the pixel to the real-depth point in a window x
/// window patch closest to the keypoint's 3D position and tags jump_edge.
/// Untouched when there is no jump edge or no valid real depth in the patch.
ProjectedKeypoint jump_edge_adjust(const ProjectedKeypoint& kp, const DepthImage& real_depth,
                                   const DepthImage& gen_depth, const CameraIntrinsics& k,
                                   double threshold = 0.05, int window = 11);

/// Re-localizes the keypoint among real-depth pixels within the search radius
/// by 0.7 * distance to the keypoint's 3D position + 0.3 * FPFH distance to
/// the generated cloud's descriptor at the keypoint, each term divided by its
/// maximum over candidates. Skipped when either side lacks valid depth.
ProjectedKeypoint feature_match_refine(const ProjectedKeypoint& kp, const DepthImage& gen_depth,
                                       const DepthImage& real_depth, const CameraIntrinsics& k,
                                       const AnnotationConfig& cfg = {});

/// Points inside the keypoints' axis-aligned box grown by dilation on every
/// face. Throws EmptyCrop when nothing remains.
PointCloud crop_by_keypoint_volume(const PointCloud& cloud, const Points3& keypoints, double dilation);

struct ObjectRefinement {
  RigidTransform camera_pose;  // corrected
  std::vector<ProjectedKeypoint> keypoints;
  std::optional<IcpResult> icp;
  std::optional<std::string> warning;  // set when ICP failed and the input pose was kept
};

/// Renders the model, crops generated and real clouds to the keypoint volume
/// (the real one dilated), aligns them by point-to-plane ICP and applies the
/// correction to the camera pose; every keypoint is re-projected and tagged icp.
ObjectRefinement object_refine(const AnnotationFrame& frame, const SurfaceModel& model,
                               const Keypoints3D& kps, const AnnotationConfig& cfg = {});

/// Projection plus occlusion classification against the rendered model.
std::vector<ProjectedKeypoint> project_and_classify(const AnnotationFrame& frame, const SurfaceModel& model,
                                                    const Keypoints3D& kps, const AnnotationConfig& cfg = {});

/// Per-keypoint refinement of visible keypoints: jump-edge adjustment where
/// the generated ray overshoots, feature matching otherwise.
std::vector<ProjectedKeypoint> keypoint_refine(const AnnotationFrame& frame, const SurfaceModel& model,
                                               const Keypoints3D& kps, const AnnotationConfig& cfg = {});

}  // namespace kpose
