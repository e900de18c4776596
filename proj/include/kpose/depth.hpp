#pragma once

#include <span>
#include <vector>

#include "kpose/geometry.hpp"

namespace kpose {

/// Row-major depth in meters; 0 marks a missing measurement.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0f) {}

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }
  float at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  float& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  /// 0 outside the image.
  float sample(int u, int v) const { return contains(u, v) ? at(u, v) : 0.0f; }

  void validate() const;
};

/// Camera-frame points with optional normals and their source pixel (v * width + u).
struct PointCloud {
  Points3 points;
  Points3 normals;  // empty or same size as points
  std::vector<int> pixels;

  Eigen::Index size() const { return points.cols(); }
  bool has_normals() const { return normals.cols() == points.cols() && points.cols() > 0; }
};

Vec3 back_project_pixel(double u, double v, double depth, const CameraIntrinsics& k);

/// Every valid pixel (optionally every stride-th row and column).
PointCloud back_project(const DepthImage& depth, const CameraIntrinsics& k, int stride = 1);

/// Columns of cloud selected by index.
PointCloud select(const PointCloud& cloud, std::span<const Eigen::Index> idx);

/// Normals from the 3x3 covariance of back-projected neighbours in a
/// window x window pixel patch, oriented toward the camera. Neighbours whose
/// depth differs from the centre by more than max_depth_jump are ignored.
/// Pixels with fewer than three usable neighbours get a zero normal.
Points3 estimate_normals(const DepthImage& depth, const CameraIntrinsics& k,
                         std::span<const int> pixels, int window = 5,
                         double max_depth_jump = 0.05);

}  // namespace kpose
