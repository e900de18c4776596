#include "kpose/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kpose {

void SurfaceModel::validate() const {
  const auto n = vertices.cols();
  for (const auto& t : triangles) {
    for (int i : t) {
      if (i < 0 || i >= n) throw Error(ErrorCode::InvalidArgument, "triangle index out of range");
    }
  }
  if (normals.cols() != n) throw Error(ErrorCode::DimensionMismatch, "one normal per vertex required");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(normals.col(i).norm() - 1.0) > 1e-6) {
      throw Error(ErrorCode::InvalidArgument, "vertex normals must be unit length");
    }
  }
}

SurfaceModel SurfaceModel::with_vertex_normals(Points3 vertices,
                                               std::vector<std::array<int, 3>> triangles) {
  SurfaceModel m;
  m.vertices = std::move(vertices);
  m.triangles = std::move(triangles);
  m.normals = Points3::Zero(3, m.vertices.cols());
  for (const auto& t : m.triangles) {
    const Vec3 a = m.vertices.col(t[0]);
    const Vec3 n = (Vec3(m.vertices.col(t[1])) - a).cross(Vec3(m.vertices.col(t[2])) - a);
    for (int i : t) m.normals.col(i) += n;
  }
  for (Eigen::Index i = 0; i < m.normals.cols(); ++i) {
    const double len = m.normals.col(i).norm();
    m.normals.col(i) = len > 0.0 ? Vec3(m.normals.col(i) / len) : Vec3::UnitZ();
  }
  m.validate();
  return m;
}

SurfaceModel SurfaceModel::merge(const SurfaceModel& a, const SurfaceModel& b) {
  SurfaceModel m;
  const auto na = a.vertices.cols();
  m.vertices.resize(3, na + b.vertices.cols());
  m.vertices << a.vertices, b.vertices;
  m.normals.resize(3, na + b.normals.cols());
  m.normals << a.normals, b.normals;
  m.triangles = a.triangles;
  for (const auto& t : b.triangles) {
    m.triangles.push_back({t[0] + static_cast<int>(na), t[1] + static_cast<int>(na), t[2] + static_cast<int>(na)});
  }
  return m;
}

namespace {

constexpr double kNear = 1e-6;

struct ScreenTriangle {
  double u[3], v[3], inv_z[3];
  double inv_area;
  int x0, x1, y0, y1;  // inclusive pixel bounds, clipped to the image
};

std::vector<ScreenTriangle> setup_triangles(const SurfaceModel& model,
                                            const RigidTransform& pose,
                                            const CameraIntrinsics& k) {
  const Points3 cam = pose.apply(model.vertices);
  std::vector<ScreenTriangle> out;
  out.reserve(model.triangles.size());
  for (const auto& t : model.triangles) {
    ScreenTriangle st{};
    bool ok = true;
    for (int j = 0; j < 3; ++j) {
      const Vec3 p = cam.col(t[static_cast<std::size_t>(j)]);
      if (!(p.z() > kNear)) {
        ok = false;
        break;
      }
      st.u[j] = k.fx * p.x() / p.z() + k.cx;
      st.v[j] = k.fy * p.y() / p.z() + k.cy;
      st.inv_z[j] = 1.0 / p.z();
    }
    if (!ok) continue;
    const double area = (st.u[1] - st.u[0]) * (st.v[2] - st.v[0]) - (st.u[2] - st.u[0]) * (st.v[1] - st.v[0]);
    if (std::abs(area) < 1e-12) continue;
    st.inv_area = 1.0 / area;
    const double umin = std::min({st.u[0], st.u[1], st.u[2]});
    const double umax = std::max({st.u[0], st.u[1], st.u[2]});
    const double vmin = std::min({st.v[0], st.v[1], st.v[2]});
    const double vmax = std::max({st.v[0], st.v[1], st.v[2]});
    st.x0 = std::max(0, static_cast<int>(std::ceil(umin)));
    st.x1 = std::min(k.width - 1, static_cast<int>(std::floor(umax)));
    st.y0 = std::max(0, static_cast<int>(std::ceil(vmin)));
    st.y1 = std::min(k.height - 1, static_cast<int>(std::floor(vmax)));
    if (st.x0 > st.x1 || st.y0 > st.y1) continue;
    out.push_back(st);
  }
  return out;
}

// Scan rows [row_begin, row_end] of one triangle into the z-buffer.
void scan_triangle(const ScreenTriangle& t, int row_begin, int row_end, int width,
                   std::vector<double>& zbuf) {
  const int y0 = std::max(t.y0, row_begin);
  const int y1 = std::min(t.y1, row_end);
  for (int y = y0; y <= y1; ++y) {
    for (int x = t.x0; x <= t.x1; ++x) {
      const double b0 = ((t.u[1] - x) * (t.v[2] - y) - (t.u[2] - x) * (t.v[1] - y)) * t.inv_area;
      const double b1 = ((t.u[2] - x) * (t.v[0] - y) - (t.u[0] - x) * (t.v[2] - y)) * t.inv_area;
      const double b2 = 1.0 - b0 - b1;
      if (b0 < 0.0 || b1 < 0.0 || b2 < 0.0) continue;
      const double z = 1.0 / (b0 * t.inv_z[0] + b1 * t.inv_z[1] + b2 * t.inv_z[2]);
      double& cell = zbuf[static_cast<std::size_t>(y) * width + x];
      if (z < cell) cell = z;
    }
  }
}

DepthImage finish(const std::vector<double>& zbuf, const CameraIntrinsics& k) {
  DepthImage out(k.width, k.height);
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    out.data[i] = std::isfinite(zbuf[i]) ? static_cast<float>(zbuf[i]) : 0.0f;
  }
  return out;
}

constexpr int kBandRows = 16;

}  // namespace

DepthImage render_depth(const SurfaceModel& model, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k) {
  k.validate();
  const std::vector<ScreenTriangle> tris = setup_triangles(model, camera_pose, k);
  const int bands = (k.height + kBandRows - 1) / kBandRows;
  std::vector<std::vector<int>> bins(static_cast<std::size_t>(bands));
  for (std::size_t i = 0; i < tris.size(); ++i) {
    for (int b = tris[i].y0 / kBandRows; b <= tris[i].y1 / kBandRows; ++b) {
      bins[static_cast<std::size_t>(b)].push_back(static_cast<int>(i));
    }
  }
  std::vector<double> zbuf(static_cast<std::size_t>(k.width) * k.height,
                           std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(dynamic, 1)
  for (int b = 0; b < bands; ++b) {
    const int r0 = b * kBandRows;
    const int r1 = std::min(k.height - 1, r0 + kBandRows - 1);
    for (int i : bins[static_cast<std::size_t>(b)]) {
      scan_triangle(tris[static_cast<std::size_t>(i)], r0, r1, k.width, zbuf);
    }
  }
  return finish(zbuf, k);
}

namespace serial {

DepthImage render_depth(const SurfaceModel& model, const RigidTransform& camera_pose,
                        const CameraIntrinsics& k) {
  k.validate();
  std::vector<double> zbuf(static_cast<std::size_t>(k.width) * k.height,
                           std::numeric_limits<double>::infinity());
  for (const auto& t : setup_triangles(model, camera_pose, k)) {
    scan_triangle(t, 0, k.height - 1, k.width, zbuf);
  }
  return finish(zbuf, k);
}

}  // namespace serial

}  // namespace kpose
