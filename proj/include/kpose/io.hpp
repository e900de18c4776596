#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kpose/annotation.hpp"
#include "kpose/depth.hpp"
#include "kpose/geometry.hpp"
#include "kpose/heatmap.hpp"
#include "kpose/metrics.hpp"
#include "kpose/pose_solver.hpp"
#include "kpose/raster.hpp"
#include "kpose/shape_model.hpp"

namespace kpose {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it over path.
void write_file_atomic(const fs::path& path, std::string_view bytes);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

// ---- mesh, depth, trajectory ----

/// ASCII PLY with x y z (optionally nx ny nz) vertices and polygon faces
/// (fan-triangulated). Vertex normals are recomputed from the faces when
/// absent or not unit length.
SurfaceModel read_ply(const fs::path& path);
void write_ply(const fs::path& path, const SurfaceModel& model);

/// Single-channel PFM, float32 meters; the sign of the scale field selects
/// byte order and rows run bottom to top.
DepthImage read_pfm(const fs::path& path);
void write_pfm(const fs::path& path, const DepthImage& depth);

/// Binary PGM (P5) holding millimetres, big-endian when maxval > 255.
DepthImage read_pgm16(const fs::path& path);
void write_pgm16(const fs::path& path, const DepthImage& depth);

/// Dispatches on extension (.pfm or .pgm).
DepthImage read_depth(const fs::path& path);

struct TrajectoryEntry {
  double timestamp = 0.0;
  RigidTransform pose;  // fixed frame -> camera
};

/// Lines "timestamp tx ty tz qx qy qz qw"; '#' starts a comment line.
std::vector<TrajectoryEntry> read_tum(const fs::path& path);
void write_tum(const fs::path& path, const std::vector<TrajectoryEntry>& entries);

// ---- heatmaps ----

/// KHM1 container plus a "<path>.json" sidecar with keypoint names and the
/// heatmap -> image mapping. Values are stored as float32.
void write_khm(const fs::path& path, const HeatmapStack& stack);
HeatmapStack read_khm(const fs::path& path);
fs::path khm_sidecar(const fs::path& path);

// ---- JSON records ----

Json matrix_json(const Eigen::MatrixXd& m);  // array of rows
Eigen::MatrixXd matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols);
Json vector_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j, std::optional<Eigen::Index> size = std::nullopt);

Json to_json(const ShapeBasis& basis);
ShapeBasis basis_from_json(const Json& j);

Json to_json(const Keypoints3D& kps);
Keypoints3D keypoints_from_json(const Json& j);

Json to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const Json& j);

Json to_json(const RigidTransform& t);
RigidTransform transform_from_json(const Json& j);

Json to_json(const SymmetrySet& sym);
SymmetrySet symmetries_from_json(const Json& j);

struct ObservationFrame {
  int frame_id = 0;
  KeypointObservations obs;
};
Json to_json(const ObservationFrame& f);
ObservationFrame observations_from_json(const Json& j);

struct GroundTruth {
  int frame_id = 0;
  RigidTransform pose;  // object -> camera
  ShapeCoefficients c;
};
Json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const Json& j);

/// Solved frame: weak and (when present) full solutions with residuals,
/// flags and, optionally, the cost trace.
Json pose_estimate_json(int frame_id, const PoseEstimate& est, bool include_trace);
/// Frame whose solve raised; the error code and message are recorded.
Json pose_failure_json(int frame_id, ErrorCode code, const std::string& message);

/// What evaluation reads back from a pose file.
struct PoseRecord {
  int frame_id = 0;
  bool ok = false;
  std::optional<Rotation> weak_rotation;   // rbar lifted to a rotation
  std::optional<RigidTransform> full;      // object -> camera
};
PoseRecord pose_record_from_json(const Json& j);

Json annotation_json(int frame_id, const RigidTransform& camera_pose,
                     const std::vector<ProjectedKeypoint>& kps,
                     const std::optional<std::string>& warning);

}  // namespace kpose
