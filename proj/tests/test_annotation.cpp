#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "kpose/annotation.hpp"
#include "kpose/synth.hpp"
#include "test_util.hpp"

using namespace kpose;
using kpose::testing::deg;

namespace {

CameraIntrinsics camera() { return {500.0, 500.0, 319.5, 239.5, 640, 480}; }

SurfaceModel quad_at(double z, double half, double cx = 0.0) {
  Points3 v(3, 4);
  v << cx - half, cx + half, cx + half, cx - half,  //
      -half, -half, half, half,                     //
      z, z, z, z;
  return SurfaceModel::with_vertex_normals(v, {{0, 2, 1}, {0, 3, 2}});
}

ProjectedKeypoint kp_at(const Vec3& cam, const CameraIntrinsics& k, Vec3 normal = Vec3::Zero()) {
  ProjectedKeypoint kp;
  kp.name = "k";
  kp.cam_point = cam;
  kp.cam_normal = normal;
  kp.pixel = cam.z() > 0.0 ? Vec2(project_full(Points3(cam), RigidTransform::identity(), k).col(0))
                           : Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
  return kp;
}

DepthImage constant_depth(const CameraIntrinsics& k, float z) {
  DepthImage d(k.width, k.height);
  std::fill(d.data.begin(), d.data.end(), z);
  return d;
}

RigidTransform look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  Mat3 r;
  r.row(0) = right;
  r.row(1) = forward.cross(right);
  r.row(2) = forward;
  const Rotation rot = Rotation::nearest(r);
  return {rot, -(rot * eye)};
}

RigidTransform shifted(const RigidTransform& pose, const Vec3& d) { return {pose.rotation, pose.translation + d}; }

}  // namespace

TEST(ProjectKeypoints, OpticalAxisLandsOnPrincipalPoint) {
  const CameraIntrinsics k = camera();
  Keypoints3D kps;
  kps.points.resize(3, 3);
  kps.points << 0, 0, 10,  //
      0, 0, 0,             //
      2, -1, 1;
  kps.names = {"axis", "behind", "off"};
  const auto out = project_keypoints(kps, RigidTransform::identity(), k);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NEAR(out[0].pixel.x(), k.cx, 1e-12);
  EXPECT_NEAR(out[0].pixel.y(), k.cy, 1e-12);
  EXPECT_EQ(out[0].visibility, Visibility::Visible);
  EXPECT_EQ(out[1].visibility, Visibility::Occluded);
  EXPECT_EQ(out[2].visibility, Visibility::Occluded);
  EXPECT_EQ(out[0].name, "axis");
}

TEST(OcclusionTest, NormalTest) {
  const CameraIntrinsics k = camera();
  const DepthImage gen = constant_depth(k, 1.0f);
  const Vec3 view = Vec3::UnitZ();
  const ProjectedKeypoint kp = kp_at(Vec3(0, 0, 1.0), k);
  EXPECT_EQ(occlusion_test(kp, gen, Vec3(0, 0, -1), view), Visibility::Visible);
  EXPECT_EQ(occlusion_test(kp, gen, Vec3(0, 0, 1), view), Visibility::Occluded);
  EXPECT_EQ(occlusion_test(kp, gen, Vec3::Zero(), view), Visibility::Visible);
  // view . n equal to tau is not occluded
  const Vec3 at_tau(0.0, std::sqrt(1.0 - 0.15 * 0.15), -0.15);
  EXPECT_EQ(occlusion_test(kp, gen, at_tau, view, -0.15), Visibility::Visible);
  const Vec3 past_tau(0.0, std::sqrt(1.0 - 0.14 * 0.14), -0.14);
  EXPECT_EQ(occlusion_test(kp, gen, past_tau, view, -0.15), Visibility::Occluded);
}

TEST(OcclusionTest, DepthTest) {
  const CameraIntrinsics k = camera();
  const DepthImage gen = constant_depth(k, 1.5f);
  const Vec3 n(0, 0, -1), view = Vec3::UnitZ();
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 2.0), k), gen, n, view), Visibility::Occluded);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 1.5), k), gen, n, view), Visibility::Visible);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 1.0), k), gen, n, view), Visibility::Visible);
  // exactly at generated depth + slack is still visible
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 1.75), k), gen, n, view, -0.15, 0.25), Visibility::Visible);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 1.75 + 1e-9), k), gen, n, view, -0.15, 0.25), Visibility::Occluded);
}

TEST(OcclusionTest, MissingDepthOrOffImageIsOccluded) {
  const CameraIntrinsics k = camera();
  const DepthImage empty(k.width, k.height);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, 1.0), k), empty, Vec3::Zero(), Vec3::UnitZ()), Visibility::Occluded);
  const DepthImage gen = constant_depth(k, 1.0f);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(5, 0, 1.0), k), gen, Vec3::Zero(), Vec3::UnitZ()), Visibility::Occluded);
  EXPECT_EQ(occlusion_test(kp_at(Vec3(0, 0, -1.0), k), gen, Vec3::Zero(), Vec3::UnitZ()), Visibility::Occluded);
}

TEST(OcclusionTest, MonotoneInKeypointDepth) {
  const CameraIntrinsics k = camera();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> z(0.5, 3.0), xy(-0.3, 0.3);
  for (int t = 0; t < 300; ++t) {
    const DepthImage gen = constant_depth(k, static_cast<float>(z(rng)));
    const Vec3 n = kpose::testing::random_unit(rng);
    const double x = xy(rng), y = xy(rng);
    // Same ray, growing depth: once occluded, never visible again.
    bool occluded = false;
    for (double d = 0.5; d < 3.5; d += 0.01) {
      const Visibility v = occlusion_test(kp_at(Vec3(x * d, y * d, d), k), gen, n, Vec3::UnitZ());
      if (occluded) {
        EXPECT_EQ(v, Visibility::Occluded);
      }
      occluded = occluded || v == Visibility::Occluded;
    }
  }
}

TEST(JumpEdge, Detection) {
  EXPECT_TRUE(is_jump_edge(1.2, 3.0, 0.05));
  EXPECT_FALSE(is_jump_edge(1.2, 1.24, 0.05));
  EXPECT_FALSE(is_jump_edge(3.0, 1.2, 0.05));  // generated behind measured is not a jump edge
}

TEST(JumpEdge, AdjustLandsOnBoxAfterDrift) {
  const CameraIntrinsics k = camera();
  const SurfaceModel scene = SurfaceModel::merge(quad_at(1.0, 0.1), quad_at(3.0, 2.0));
  // real box edge at u = 369.5; the drifted box edge 2 px further right
  const RigidTransform drift{Rotation(), Vec3(0.004, 0, 0)};
  const DepthImage real = render_depth(scene, RigidTransform::identity(), k);
  const DepthImage gen = render_depth(scene, drift, k);
  const ProjectedKeypoint kp = kp_at(drift.apply(Vec3(0.098, 0.0, 1.0)), k);
  const auto px = keypoint_pixel(kp, k.width, k.height);
  ASSERT_TRUE(px);
  ASSERT_TRUE(is_jump_edge(gen.at(px->x(), px->y()), real.at(px->x(), px->y()), 0.05));

  const ProjectedKeypoint adj = jump_edge_adjust(kp, real, gen, k);
  EXPECT_EQ(adj.refinement, Refinement::JumpEdge);
  const double z = real.at(static_cast<int>(adj.pixel.x()), static_cast<int>(adj.pixel.y()));
  EXPECT_NEAR(z, kp.cam_point.z(), 0.05);
  EXPECT_LT(adj.pixel.x(), 369.5);
  EXPECT_LE((adj.pixel - kp.pixel).cwiseAbs().maxCoeff(), 5.0);
}

TEST(JumpEdge, UntouchedWithoutEdgeOrDepth) {
  const CameraIntrinsics k = camera();
  const DepthImage plane = constant_depth(k, 1.0f);
  const ProjectedKeypoint kp = kp_at(Vec3(0.01, 0.02, 1.0), k);
  const ProjectedKeypoint same = jump_edge_adjust(kp, plane, plane, k);
  EXPECT_EQ(same.refinement, Refinement::None);
  EXPECT_EQ(same.pixel, kp.pixel);
  const DepthImage empty(k.width, k.height);
  const ProjectedKeypoint none = jump_edge_adjust(kp, empty, plane, k);
  EXPECT_EQ(none.refinement, Refinement::None);
  EXPECT_EQ(none.pixel, kp.pixel);
}

namespace {

struct CornerScene {
  CameraIntrinsics k = camera();
  SurfaceModel scene;
  RigidTransform pose;
  ProjectedKeypoint kp;
};

// Upper front corner of the synthetic object's base box, seen obliquely.
CornerScene corner_scene() {
  CornerScene s;
  const SyntheticObject obj = make_object();
  s.scene = make_scene(obj);
  const double az = 0.6, el = 0.6;
  s.pose = look_at(Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)), Vec3::Zero());
  s.kp = kp_at(s.pose.apply(Vec3(0.15, 0.10, 0.075)), s.k);
  return s;
}

}  // namespace

TEST(FeatureMatch, IdenticalCloudsStayPut) {
  const CornerScene s = corner_scene();
  const DepthImage gen = render_depth(s.scene, s.pose, s.k);
  const ProjectedKeypoint out = feature_match_refine(s.kp, gen, gen, s.k);
  EXPECT_EQ(out.refinement, Refinement::FeatureMatch);
  EXPECT_LE((out.pixel - s.kp.pixel).norm(), 1.0);
}

namespace {

// Three orthogonal square faces of side a meeting at the origin; sign -1 puts
// them on the outside of a cube (convex corner), +1 lines the inside of one.
SurfaceModel trihedral(double a, double sign) {
  Points3 v(3, 12);
  std::vector<std::array<int, 3>> t;
  for (int axis = 0; axis < 3; ++axis) {
    const int i = (axis + 1) % 3, j = (axis + 2) % 3;
    for (int c = 0; c < 4; ++c) {
      Vec3 p = Vec3::Zero();
      p[i] = sign * a * (c == 1 || c == 2);
      p[j] = sign * a * (c >= 2);
      v.col(4 * axis + c) = p;
    }
    t.push_back({4 * axis, 4 * axis + 1, 4 * axis + 2});
    t.push_back({4 * axis, 4 * axis + 2, 4 * axis + 3});
  }
  return SurfaceModel::with_vertex_normals(v, t);
}

}  // namespace

TEST(FeatureMatch, TracksLateralShiftOnTrihedralCorner) {
  const CameraIntrinsics k = camera();
  for (const double sign : {-1.0, 1.0}) {
    const SurfaceModel m = trihedral(0.4, sign);
    const RigidTransform pose = look_at(Vec3(0.7, 0.5, 0.6), Vec3::Zero());
    const ProjectedKeypoint kp = kp_at(pose.apply(Vec3(0, 0, 0)), k);
    const DepthImage gen = render_depth(m, pose, k);
    for (const Vec3& d : {Vec3(0.01, 0, 0), Vec3(-0.01, 0, 0), Vec3(0, 0.01, 0), Vec3(0, -0.01, 0)}) {
      const DepthImage real = render_depth(m, shifted(pose, d), k);
      const Vec2 expected = project_full(Points3(Vec3(kp.cam_point + d)), RigidTransform::identity(), k).col(0);
      const ProjectedKeypoint out = feature_match_refine(kp, gen, real, k);
      EXPECT_GT((out.pixel - kp.pixel).dot(expected - kp.pixel), 0.0);
      EXPECT_LE((out.pixel - expected).norm(), 2.0) << "sign " << sign << " shift " << d.transpose() << " got "
                                                    << out.pixel.transpose() << " want " << expected.transpose();
    }
  }
}

TEST(FeatureMatch, FlatPlaneStaysWithinSearchRadius) {
  const CameraIntrinsics k = camera();
  const DepthImage plane = render_depth(quad_at(1.0, 1.0), RigidTransform::identity(), k);
  const DepthImage moved = render_depth(quad_at(1.0, 1.0, 0.01), RigidTransform::identity(), k);
  const ProjectedKeypoint kp = kp_at(Vec3(0.05, -0.02, 1.0), k);
  const AnnotationConfig cfg;
  for (const DepthImage* real : {&plane, &moved}) {
    const ProjectedKeypoint out = feature_match_refine(kp, plane, *real, k, cfg);
    EXPECT_LE((out.pixel - kp.pixel).norm(), cfg.search_radius_px + 1.0);
  }
}

TEST(FeatureMatch, SkippedWithoutDepth) {
  const CameraIntrinsics k = camera();
  const DepthImage empty(k.width, k.height);
  const DepthImage plane = constant_depth(k, 1.0f);
  const ProjectedKeypoint kp = kp_at(Vec3(0, 0, 1.0), k);
  EXPECT_EQ(feature_match_refine(kp, empty, plane, k).refinement, Refinement::None);
  EXPECT_EQ(feature_match_refine(kp, plane, empty, k).refinement, Refinement::None);
}

TEST(Crop, UnitCubeExamples) {
  PointCloud c;
  c.points.resize(3, 4);
  c.points << 0.5, 1.05, 2.0, -0.2,  //
      0.5, 0.5, 0.5, 0.5,            //
      0.5, 0.5, 0.5, 0.5;
  Points3 box(3, 2);
  box << 0, 1, 0, 1, 0, 1;
  EXPECT_EQ(crop_by_keypoint_volume(c, box, 0.0).size(), 1);
  EXPECT_EQ(crop_by_keypoint_volume(c, box, 0.1).size(), 2);
  EXPECT_EQ(crop_by_keypoint_volume(c, box, 0.2).size(), 3);
  EXPECT_EQ(crop_by_keypoint_volume(c, box, 10.0).size(), 4);
  PointCloud far;
  far.points = Points3(Vec3(5, 5, 5));
  try {
    crop_by_keypoint_volume(far, box, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCrop);
  }
}

namespace {

AnnotationFrame frame_at(const SurfaceModel& scene, const RigidTransform& truth, const RigidTransform& used,
                         const CameraIntrinsics& k) {
  AnnotationFrame f;
  f.k = k;
  f.camera_pose = used;
  f.real_depth = render_depth(scene, truth, k);
  return f;
}

double max_pairwise_gap(const std::vector<ProjectedKeypoint>& kps, const Points3& model) {
  double worst = 0.0;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    for (std::size_t j = i + 1; j < kps.size(); ++j) {
      const double a = (kps[i].cam_point - kps[j].cam_point).norm();
      const double b = (model.col(static_cast<Eigen::Index>(i)) - model.col(static_cast<Eigen::Index>(j))).norm();
      worst = std::max(worst, std::abs(a - b));
    }
  }
  return worst;
}

}  // namespace

TEST(ObjectRefine, GroundTruthPoseIsKept) {
  const SyntheticObject obj = make_object();
  const SurfaceModel scene = make_scene(obj);
  const CameraIntrinsics k{525.0, 525.0, 319.5, 239.5, 640, 480};
  const RigidTransform truth = look_at(Vec3(0.9, 0.6, 0.8), Vec3(0, 0, 0.02));
  const ObjectRefinement r = object_refine(frame_at(scene, truth, truth, k), obj.mesh, obj.keypoints);
  ASSERT_FALSE(r.warning) << *r.warning;
  const RigidTransform corr = r.camera_pose * truth.inverse();
  EXPECT_LT(deg(so3_log(corr.rotation).norm()), 0.1);
  EXPECT_LT(corr.translation.norm(), 0.001);
  EXPECT_LT(max_pairwise_gap(r.keypoints, obj.keypoints.points), 1e-12);
  for (const auto& kp : r.keypoints) EXPECT_EQ(kp.refinement, Refinement::Icp);
}

TEST(ObjectRefine, ReducesDriftAndKeepsRigidity) {
  const SyntheticObject obj = make_object();
  const SurfaceModel scene = make_scene(obj);
  const CameraIntrinsics k{525.0, 525.0, 319.5, 239.5, 640, 480};
  const RigidTransform truth = look_at(Vec3(-0.7, 0.9, 0.7), Vec3(0, 0, 0.02));
  const RigidTransform drifted{so3_exp(kpose::testing::rad(2.0) * Vec3(0.3, -0.5, 0.8).normalized()) * truth.rotation,
                               truth.translation + Vec3(0.01, -0.015, 0.01)};
  const ObjectRefinement r = object_refine(frame_at(scene, truth, drifted, k), obj.mesh, obj.keypoints);
  ASSERT_FALSE(r.warning) << *r.warning;
  const auto pixel_err = [&](const RigidTransform& p) {
    return (project_full(obj.keypoints.points, p, k) - project_full(obj.keypoints.points, truth, k))
        .colwise()
        .norm()
        .mean();
  };
  EXPECT_LT(pixel_err(r.camera_pose), 0.5 * pixel_err(drifted));
  EXPECT_LT(max_pairwise_gap(r.keypoints, obj.keypoints.points), 1e-12);
}

TEST(ObjectRefine, FailedIcpKeepsPoseWithWarning) {
  const SyntheticObject obj = make_object();
  const CameraIntrinsics k{525.0, 525.0, 319.5, 239.5, 640, 480};
  AnnotationFrame f;
  f.k = k;
  f.camera_pose = look_at(Vec3(0.9, 0.6, 0.8), Vec3::Zero());
  f.real_depth = DepthImage(k.width, k.height);
  const ObjectRefinement r = object_refine(f, obj.mesh, obj.keypoints);
  ASSERT_TRUE(r.warning);
  EXPECT_FALSE(r.icp);
  EXPECT_EQ(r.camera_pose.translation, f.camera_pose.translation);
  EXPECT_EQ(r.camera_pose.rotation.matrix(), f.camera_pose.rotation.matrix());
  for (const auto& kp : r.keypoints) EXPECT_EQ(kp.refinement, Refinement::None);
}

TEST(KeypointRefine, TagsAreExclusiveAndOccludedUntouched) {
  SynthConfig cfg;
  cfg.frames = 5;
  const SyntheticScenario sc = make_scenario(cfg);
  const SurfaceModel scene = make_scene(sc.object);
  for (const auto& fr : sc.frames) {
    const AnnotationFrame f = frame_at(scene, fr.pose, fr.drifted_pose, cfg.k);
    const auto base = project_and_classify(f, sc.object.mesh, sc.object.keypoints);
    const auto out = keypoint_refine(f, sc.object.mesh, sc.object.keypoints);
    ASSERT_EQ(out.size(), base.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_EQ(out[i].visibility, base[i].visibility);
      EXPECT_EQ(out[i].cam_point, base[i].cam_point);
      if (base[i].visibility == Visibility::Occluded) {
        EXPECT_EQ(out[i].refinement, Refinement::None);
        EXPECT_EQ(out[i].pixel, base[i].pixel);
      } else {
        EXPECT_NE(out[i].refinement, Refinement::Icp);
      }
    }
  }
}

TEST(ProjectAndClassify, VisibleKeypointsLandOnRenderedObject) {
  SynthConfig cfg;
  cfg.frames = 40;
  cfg.seed = 9;
  const SyntheticScenario sc = make_scenario(cfg);
  int visible = 0, on_object = 0;
  for (const auto& fr : sc.frames) {
    AnnotationFrame f;
    f.k = cfg.k;
    f.camera_pose = fr.pose;
    f.real_depth = DepthImage(cfg.k.width, cfg.k.height);
    const DepthImage silhouette = render_depth(sc.object.mesh, fr.pose, cfg.k);
    for (const auto& kp : project_and_classify(f, sc.object.mesh, sc.object.keypoints)) {
      if (kp.visibility != Visibility::Visible) continue;
      ++visible;
      const auto px = keypoint_pixel(kp, cfg.k.width, cfg.k.height);
      if (px && silhouette.at(px->x(), px->y()) > 0.0f) ++on_object;
    }
  }
  ASSERT_GT(visible, 100);
  EXPECT_GE(on_object, 0.99 * visible);
}
