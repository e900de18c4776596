#pragma once

#include <array>
#include <vector>

#include "kpose/depth.hpp"
#include "kpose/geometry.hpp"

namespace kpose {

/// Triangle mesh in the fixed (object/world) frame with unit vertex normals.
struct SurfaceModel {
  Points3 vertices;
  std::vector<std::array<int, 3>> triangles;
  Points3 normals;

  void validate() const;
  /// Area-weighted vertex normals from the triangle winding (counter-clockwise = outward).
  static SurfaceModel with_vertex_normals(Points3 vertices, std::vector<std::array<int, 3>> triangles);
  /// Concatenation of meshes, e.g. an object placed in a background scene.
  static SurfaceModel merge(const SurfaceModel& a, const SurfaceModel& b);
};

/// Z-buffered depth of the model seen from camera_pose (fixed -> camera).
///
/// Pixel (u, v) samples the ray through its centre; depth is the nearest
/// surface along the optical axis, 0 where no triangle covers the pixel.
/// Triangles with a vertex at or behind z = 1e-6 are skipped (no clipping).
/// Rows are split into bands processed in parallel.
DepthImage render_depth(const SurfaceModel& model, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k);

namespace serial {
DepthImage render_depth(const SurfaceModel& model, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k);
}  // namespace serial

}  // namespace kpose
