#include "kpose/depth.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace kpose {

void DepthImage::validate() const {
  if (width < 0 || height < 0 || data.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::DimensionMismatch, "depth buffer size does not match its dimensions");
  }
  for (float z : data) {
    if (!std::isfinite(z) || z < 0.0f) throw Error(ErrorCode::InvalidArgument, "depth must be finite and nonnegative");
  }
}

Vec3 back_project_pixel(double u, double v, double depth, const CameraIntrinsics& k) {
  return {(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth};
}

PointCloud back_project(const DepthImage& depth, const CameraIntrinsics& k, int stride) {
  std::vector<int> pixels;
  for (int v = 0; v < depth.height; v += stride) {
    for (int u = 0; u < depth.width; u += stride) {
      if (depth.at(u, v) > 0.0f) pixels.push_back(v * depth.width + u);
    }
  }
  PointCloud cloud;
  cloud.points.resize(3, static_cast<Eigen::Index>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int u = pixels[i] % depth.width;
    const int v = pixels[i] / depth.width;
    cloud.points.col(static_cast<Eigen::Index>(i)) = back_project_pixel(u, v, depth.at(u, v), k);
  }
  cloud.pixels = std::move(pixels);
  return cloud;
}

PointCloud select(const PointCloud& cloud, std::span<const Eigen::Index> idx) {
  PointCloud out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.points.resize(3, n);
  if (cloud.has_normals()) out.normals.resize(3, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index i = idx[static_cast<std::size_t>(j)];
    out.points.col(j) = cloud.points.col(i);
    if (cloud.has_normals()) out.normals.col(j) = cloud.normals.col(i);
    if (!cloud.pixels.empty()) out.pixels.push_back(cloud.pixels[static_cast<std::size_t>(i)]);
  }
  return out;
}

Points3 estimate_normals(const DepthImage& depth, const CameraIntrinsics& k,
                         std::span<const int> pixels, int window, double max_depth_jump) {
  const auto n = static_cast<Eigen::Index>(pixels.size());
  Points3 normals = Points3::Zero(3, n);
  const int half = window / 2;
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const int u0 = pixels[static_cast<std::size_t>(i)] % depth.width;
    const int v0 = pixels[static_cast<std::size_t>(i)] / depth.width;
    const double z0 = depth.at(u0, v0);
    Vec3 sum = Vec3::Zero();
    Mat3 outer = Mat3::Zero();
    int count = 0;
    for (int dv = -half; dv <= half; ++dv) {
      for (int du = -half; du <= half; ++du) {
        const double z = depth.sample(u0 + du, v0 + dv);
        if (z <= 0.0 || std::abs(z - z0) > max_depth_jump) continue;
        const Vec3 p = back_project_pixel(u0 + du, v0 + dv, z, k);
        sum += p;
        outer += p * p.transpose();
        ++count;
      }
    }
    if (count < 3) continue;
    const Vec3 mean = sum / count;
    const Mat3 cov = outer / count - mean * mean.transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 nrm = es.eigenvectors().col(0);
    const Vec3 centre = back_project_pixel(u0, v0, z0, k);
    if (nrm.dot(centre) > 0.0) nrm = -nrm;
    normals.col(i) = nrm.normalized();
  }
  return normals;
}

}  // namespace kpose
