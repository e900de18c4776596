#include "kpose/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kpose/fpfh.hpp"

namespace kpose {

const char* to_string(Visibility v) {
  return v == Visibility::Visible ? "visible" : "occluded";
}

const char* to_string(Refinement r) {
  switch (r) {
    case Refinement::None: return "none";
    case Refinement::JumpEdge: return "jump_edge";
    case Refinement::FeatureMatch: return "feature_match";
    case Refinement::Icp: return "icp";
  }
  return "none";
}

void AnnotationFrame::validate() const {
  k.validate();
  real_depth.validate();
  if (real_depth.width != k.width || real_depth.height != k.height) {
    throw Error(ErrorCode::DimensionMismatch, "depth frame size differs from the intrinsics");
  }
}

void AnnotationConfig::validate() const {
  auto positive = [](double x, const char* what) {
    if (!(x > 0.0)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be positive");
  };
  if (depth_slack < 0.0) throw Error(ErrorCode::InvalidArgument, "depth_slack must be nonnegative");
  positive(jump_threshold, "jump_threshold");
  positive(search_radius_px, "search_radius_px");
  positive(fpfh_radius, "fpfh_radius");
  if (jump_window < 1 || normal_window < 3 || icp_stride < 1) {
    throw Error(ErrorCode::InvalidArgument, "window sizes and strides must be at least 1 (normal window 3)");
  }
  if (w_euclid < 0.0 || w_feat < 0.0 || w_euclid + w_feat <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "feature-match weights must be nonnegative and not both zero");
  }
  if (dilation_fraction < 0.0 || dilation_offset < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "dilation must be nonnegative");
  }
  if (!(view.norm() > 0.0)) throw Error(ErrorCode::InvalidArgument, "view vector must be nonzero");
  positive(icp.corr_dist, "icp.corr_dist");
  positive(icp.rel_tol, "icp.rel_tol");
  if (icp.max_iters < 1 || icp.max_step_halvings < 0) {
    throw Error(ErrorCode::InvalidArgument, "icp.max_iters must be at least 1");
  }
}

std::optional<Eigen::Vector2i> keypoint_pixel(const ProjectedKeypoint& kp, int width, int height) {
  if (!(kp.cam_point.z() > 0.0) || !kp.pixel.allFinite()) return std::nullopt;
  const double u = std::round(kp.pixel.x());
  const double v = std::round(kp.pixel.y());
  if (u < 0.0 || v < 0.0 || u >= width || v >= height) return std::nullopt;
  return Eigen::Vector2i(static_cast<int>(u), static_cast<int>(v));
}

std::vector<ProjectedKeypoint> project_keypoints(const Keypoints3D& kps, const RigidTransform& camera_pose,
                                                 const CameraIntrinsics& k) {
  k.validate();
  std::vector<ProjectedKeypoint> out(static_cast<std::size_t>(kps.size()));
  for (Eigen::Index i = 0; i < kps.size(); ++i) {
    auto& kp = out[static_cast<std::size_t>(i)];
    if (static_cast<std::size_t>(i) < kps.names.size()) kp.name = kps.names[static_cast<std::size_t>(i)];
    kp.cam_point = camera_pose.apply(Vec3(kps.points.col(i)));
    if (kps.normals) kp.cam_normal = camera_pose.rotation * Vec3(kps.normals->col(i));
    const double z = kp.cam_point.z();
    if (z > 0.0) {
      kp.pixel = {k.fx * kp.cam_point.x() / z + k.cx, k.fy * kp.cam_point.y() / z + k.cy};
    } else {
      kp.pixel = Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
    }
    kp.visibility = keypoint_pixel(kp, k.width, k.height) ? Visibility::Visible : Visibility::Occluded;
  }
  return out;
}

Visibility occlusion_test(const ProjectedKeypoint& kp, const DepthImage& gen_depth, const Vec3& normal_c,
                          const Vec3& view_c, double tau, double depth_slack) {
  const auto px = keypoint_pixel(kp, gen_depth.width, gen_depth.height);
  if (!px) return Visibility::Occluded;
  const double gen = gen_depth.at(px->x(), px->y());
  if (!(gen > 0.0)) return Visibility::Occluded;
  if (kp.cam_point.z() > gen + depth_slack) return Visibility::Occluded;
  if (normal_c.squaredNorm() > 0.0 && view_c.dot(normal_c) > tau) return Visibility::Occluded;
  return Visibility::Visible;
}

bool is_jump_edge(double gen, double real, double threshold) {
  return gen > 0.0 && real > 0.0 && gen < real - threshold;
}

ProjectedKeypoint jump_edge_adjust(const ProjectedKeypoint& kp, const DepthImage& real_depth,
                                   const DepthImage& gen_depth, const CameraIntrinsics& k,
                                   double threshold, int window) {
  const auto px = keypoint_pixel(kp, real_depth.width, real_depth.height);
  if (!px) return kp;
  if (!is_jump_edge(gen_depth.sample(px->x(), px->y()), real_depth.at(px->x(), px->y()), threshold)) return kp;

  const int half = window / 2;
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector2i best_px = *px;
  for (int dv = -half; dv <= half; ++dv) {
    for (int du = -half; du <= half; ++du) {
      const int u = px->x() + du;
      const int v = px->y() + dv;
      const double z = real_depth.sample(u, v);
      if (!(z > 0.0)) continue;
      const double d2 = (back_project_pixel(u, v, z, k) - kp.cam_point).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_px = {u, v};
      }
    }
  }
  if (!std::isfinite(best)) return kp;
  ProjectedKeypoint out = kp;
  out.pixel = best_px.cast<double>();
  out.refinement = Refinement::JumpEdge;
  return out;
}

namespace {

// Neighbourhood around a pixel: a stride-2 lattice (even u and v) over the
// support window, plus the query pixels inside the disc at full density.
// The lattice sits on the same image grid for every centre and every depth
// image, so descriptors from two images are built the same way.
struct LocalCloud {
  PointCloud lattice;
  PointCloud queries;
};

PointCloud oriented_pixels(const DepthImage& depth, const CameraIntrinsics& k, const std::vector<int>& pixels,
                           int normal_window) {
  const Points3 normals = estimate_normals(depth, k, pixels, normal_window);
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (normals.col(static_cast<Eigen::Index>(i)).squaredNorm() > 0.0) keep.push_back(static_cast<Eigen::Index>(i));
  }
  PointCloud c;
  c.points.resize(3, static_cast<Eigen::Index>(keep.size()));
  c.normals.resize(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const int p = pixels[static_cast<std::size_t>(keep[j])];
    const int u = p % depth.width;
    const int v = p / depth.width;
    c.points.col(static_cast<Eigen::Index>(j)) = back_project_pixel(u, v, depth.at(u, v), k);
    c.normals.col(static_cast<Eigen::Index>(j)) = normals.col(keep[j]);
    c.pixels.push_back(p);
  }
  return c;
}

LocalCloud local_cloud(const DepthImage& depth, const CameraIntrinsics& k, const Eigen::Vector2i& centre,
                       double disc_px, int support_px, int normal_window) {
  const int r = static_cast<int>(std::ceil(disc_px)) + support_px;
  std::vector<int> lattice, queries;
  for (int v = centre.y() - r; v <= centre.y() + r; ++v) {
    for (int u = centre.x() - r; u <= centre.x() + r; ++u) {
      if (!depth.contains(u, v) || !(depth.at(u, v) > 0.0f)) continue;
      const double du = u - centre.x();
      const double dv = v - centre.y();
      if (du * du + dv * dv <= disc_px * disc_px) queries.push_back(v * depth.width + u);
      if (u % 2 == 0 && v % 2 == 0) lattice.push_back(v * depth.width + u);
    }
  }
  return {oriented_pixels(depth, k, lattice, normal_window), oriented_pixels(depth, k, queries, normal_window)};
}

}  // namespace

ProjectedKeypoint feature_match_refine(const ProjectedKeypoint& kp, const DepthImage& gen_depth,
                                       const DepthImage& real_depth, const CameraIntrinsics& k,
                                       const AnnotationConfig& cfg) {
  const auto px = keypoint_pixel(kp, gen_depth.width, gen_depth.height);
  if (!px) return kp;
  const double gz = gen_depth.at(px->x(), px->y());
  if (!(gz > 0.0)) return kp;

  // FPFH at a point reads neighbours up to two radii away
  const int support = static_cast<int>(std::ceil(2.0 * cfg.fpfh_radius * std::max(k.fx, k.fy) / gz)) + 1;

  const LocalCloud gen = local_cloud(gen_depth, k, *px, 0.0, support, cfg.normal_window);
  if (gen.queries.size() == 0 || gen.lattice.size() == 0) return kp;
  const FpfhDescriptor target =
      fpfh_query(gen.lattice.points, gen.lattice.normals, cfg.fpfh_radius, gen.queries.points, gen.queries.normals)
          .values.col(0);

  const LocalCloud real = local_cloud(real_depth, k, *px, cfg.search_radius_px, support, cfg.normal_window);
  if (real.queries.size() == 0 || real.lattice.size() == 0) return kp;
  const FpfhDescriptors cand = fpfh_query(real.lattice.points, real.lattice.normals, cfg.fpfh_radius,
                                          real.queries.points, real.queries.normals);

  const Eigen::Index n = real.queries.size();
  Eigen::VectorXd euclid(n), feat(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    euclid(j) = (real.queries.points.col(j) - kp.cam_point).norm();
    feat(j) = (cand.values.col(j) - target).norm();
  }
  const double me = euclid.maxCoeff();
  const double mf = feat.maxCoeff();
  Eigen::Index best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double score = cfg.w_euclid * (me > 0.0 ? euclid(j) / me : 0.0) +
                         cfg.w_feat * (mf > 0.0 ? feat(j) / mf : 0.0);
    if (score < best_score) {
      best_score = score;
      best = j;
    }
  }
  const int p = real.queries.pixels[static_cast<std::size_t>(best)];
  ProjectedKeypoint out = kp;
  out.pixel = {static_cast<double>(p % real_depth.width), static_cast<double>(p / real_depth.width)};
  out.refinement = Refinement::FeatureMatch;
  return out;
}

PointCloud crop_by_keypoint_volume(const PointCloud& cloud, const Points3& keypoints, double dilation) {
  if (keypoints.cols() == 0) throw Error(ErrorCode::InvalidArgument, "cropping needs at least one keypoint");
  const Vec3 lo = keypoints.rowwise().minCoeff().array() - dilation;
  const Vec3 hi = keypoints.rowwise().maxCoeff().array() + dilation;
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.points.col(i);
    if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) idx.push_back(i);
  }
  if (idx.empty()) throw Error(ErrorCode::EmptyCrop, "no points inside the keypoint volume");
  return select(cloud, idx);
}

namespace {

void classify(std::vector<ProjectedKeypoint>& kps, const DepthImage& gen, const AnnotationConfig& cfg) {
  const Vec3 view = cfg.view.normalized();
  for (auto& kp : kps) {
    kp.visibility = occlusion_test(kp, gen, kp.cam_normal, view, cfg.tau, cfg.depth_slack);
  }
}

}  // namespace

std::vector<ProjectedKeypoint> project_and_classify(const AnnotationFrame& frame, const SurfaceModel& model,
                                                    const Keypoints3D& kps, const AnnotationConfig& cfg) {
  auto out = project_keypoints(kps, frame.camera_pose, frame.k);
  classify(out, render_depth(model, frame.camera_pose, frame.k), cfg);
  return out;
}

std::vector<ProjectedKeypoint> keypoint_refine(const AnnotationFrame& frame, const SurfaceModel& model,
                                               const Keypoints3D& kps, const AnnotationConfig& cfg) {
  const DepthImage gen = render_depth(model, frame.camera_pose, frame.k);
  auto out = project_keypoints(kps, frame.camera_pose, frame.k);
  classify(out, gen, cfg);
  for (auto& kp : out) {
    if (kp.visibility != Visibility::Visible) continue;
    const auto px = keypoint_pixel(kp, gen.width, gen.height);
    if (is_jump_edge(gen.at(px->x(), px->y()), frame.real_depth.at(px->x(), px->y()), cfg.jump_threshold)) {
      kp = jump_edge_adjust(kp, frame.real_depth, gen, frame.k, cfg.jump_threshold, cfg.jump_window);
    } else {
      kp = feature_match_refine(kp, gen, frame.real_depth, frame.k, cfg);
    }
  }
  return out;
}

ObjectRefinement object_refine(const AnnotationFrame& frame, const SurfaceModel& model,
                               const Keypoints3D& kps, const AnnotationConfig& cfg) {
  ObjectRefinement res;
  res.camera_pose = frame.camera_pose;
  const DepthImage gen = render_depth(model, frame.camera_pose, frame.k);
  try {
    const Points3 kp_cam = frame.camera_pose.apply(kps.points);
    const double diag = (kp_cam.rowwise().maxCoeff() - kp_cam.rowwise().minCoeff()).norm();
    const PointCloud src = crop_by_keypoint_volume(back_project(gen, frame.k, cfg.icp_stride), kp_cam, 0.0);
    PointCloud real = crop_by_keypoint_volume(back_project(frame.real_depth, frame.k, cfg.icp_stride), kp_cam,
                                              cfg.dilation_fraction * diag + cfg.dilation_offset);
    real.normals = estimate_normals(frame.real_depth, frame.k, real.pixels, cfg.normal_window);
    std::vector<Eigen::Index> oriented;
    for (Eigen::Index i = 0; i < real.size(); ++i) {
      if (real.normals.col(i).squaredNorm() > 0.0) oriented.push_back(i);
    }
    const PointCloud tgt = select(real, oriented);
    if (tgt.size() == 0) throw Error(ErrorCode::EmptyCrop, "no real points with a usable normal");
    res.icp = icp_point_to_plane(src.points, tgt, RigidTransform::identity(), cfg.icp);
    res.camera_pose = res.icp->transform * frame.camera_pose;
  } catch (const Error& e) {
    res.warning = std::string("object refinement skipped: ") + e.what();
    res.icp.reset();
    res.camera_pose = frame.camera_pose;
  }

  res.keypoints = project_keypoints(kps, res.camera_pose, frame.k);
  if (res.warning) {
    classify(res.keypoints, gen, cfg);
  } else {
    classify(res.keypoints, render_depth(model, res.camera_pose, frame.k), cfg);
    for (auto& kp : res.keypoints) kp.refinement = Refinement::Icp;
  }
  return res;
}

}  // namespace kpose
