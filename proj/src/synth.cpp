#include "kpose/synth.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>
#include <random>

#include "kpose/io.hpp"

namespace kpose {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

using Rng = std::mt19937_64;

Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

Vec3 random_direction(Rng& rng) {
  Vec3 v;
  do {
    v = {normal(rng), normal(rng), normal(rng)};
  } while (v.norm() < 1e-12);
  return v.normalized();
}

// Closed box with outward counter-clockwise faces.
void add_box(const Vec3& lo, const Vec3& hi, std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& tris) {
  const int base = static_cast<int>(verts.size());
  for (int i = 0; i < 8; ++i) {
    verts.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  }
  const Vec3 centre = (lo + hi) / 2.0;
  for (int axis = 0; axis < 3; ++axis) {
    const int ia = 1 << ((axis + 1) % 3);
    const int ib = 1 << ((axis + 2) % 3);
    for (int side = 0; side < 2; ++side) {
      const int f = side ? (1 << axis) : 0;
      std::array<int, 4> q{base + f, base + f + ia, base + f + ia + ib, base + f + ib};
      const Vec3 n = (verts[static_cast<std::size_t>(q[1])] - verts[static_cast<std::size_t>(q[0])])
                         .cross(verts[static_cast<std::size_t>(q[2])] - verts[static_cast<std::size_t>(q[0])]);
      if (n.dot(verts[static_cast<std::size_t>(q[0])] - centre) < 0.0) std::swap(q[1], q[3]);
      tris.push_back({q[0], q[1], q[2]});
      tris.push_back({q[0], q[2], q[3]});
    }
  }
}

SurfaceModel mesh_of(const std::vector<Vec3>& verts, std::vector<std::array<int, 3>> tris) {
  Points3 v(3, static_cast<Eigen::Index>(verts.size()));
  for (std::size_t i = 0; i < verts.size(); ++i) v.col(static_cast<Eigen::Index>(i)) = verts[i];
  return SurfaceModel::with_vertex_normals(std::move(v), std::move(tris));
}

constexpr double kBottom = -0.075;

// Camera looking at the object from a random upper-hemisphere viewpoint.
RigidTransform sample_pose(Rng& rng, const SynthConfig& cfg) {
  const double d = uniform(rng, cfg.min_distance, cfg.max_distance);
  const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double el = uniform(rng, 20.0, 60.0) * kDeg;
  const double roll = uniform(rng, -10.0, 10.0) * kDeg;
  const Vec3 target(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
  const Vec3 eye = target + d * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  const Rotation rot = so3_exp(Vec3::UnitZ() * roll) * Rotation::nearest(r);
  return {rot, -(rot * eye)};
}

Points3 deformation_directions(Rng& rng, const Points3& base, int modes) {
  const Eigen::Index p = base.cols();
  // generators of similarity motions: translations, rotations, scale
  Eigen::MatrixXd g(3 * p, 7);
  for (Eigen::Index i = 0; i < p; ++i) {
    const Vec3 x = base.col(i);
    for (int a = 0; a < 3; ++a) {
      g.block<3, 1>(3 * i, a) = Vec3::Unit(a);
      g.block<3, 1>(3 * i, 3 + a) = Vec3::Unit(a).cross(x);
    }
    g.block<3, 1>(3 * i, 6) = x;
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(3 * p, 7);
  Eigen::MatrixXd r(3 * p, modes);
  for (Eigen::Index j = 0; j < r.size(); ++j) r.data()[j] = normal(rng);
  r -= q * (q.transpose() * r);
  const Eigen::MatrixXd d = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ() *
                            Eigen::MatrixXd::Identity(3 * p, modes);
  return Eigen::Map<const Points3>(d.data(), 3, p * modes);
}

std::string frame_name(int id, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d%s", id, ext);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  k.validate();
  if (frames < 1 || instances < 2 || modes < 0 || modes > instances - 1) {
    throw Error(ErrorCode::InvalidArgument, "synthetic scenario needs frames >= 1 and 0 <= modes < instances");
  }
  if (!(min_distance > 0.3) || max_distance < min_distance) {
    throw Error(ErrorCode::InvalidArgument, "camera distances must satisfy 0.3 < min <= max");
  }
  if (noise.pixel_sigma < 0.0 || noise.outlier_fraction < 0.0 || noise.outlier_fraction > 1.0 ||
      noise.inlier_confidence < 0.0 || noise.inlier_confidence > 1.0 || noise.outlier_confidence < 0.0 ||
      noise.outlier_confidence > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "noise model out of range");
  }
  if (drift_deg < 0.0 || drift_m < 0.0 || heatmap_scale < 1) {
    throw Error(ErrorCode::InvalidArgument, "drift must be nonnegative and heatmap_scale >= 1");
  }
}

SyntheticObject make_object() {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  add_box({-0.15, -0.10, kBottom}, {0.15, 0.10, 0.075}, verts, tris);
  add_box({-0.06, -0.05, 0.075}, {0.06, 0.05, 0.155}, verts, tris);

  SyntheticObject obj;
  obj.mesh = mesh_of(verts, std::move(tris));

  struct Kp {
    const char* name;
    Vec3 p;
    Vec3 n;
  };
  const std::array<Kp, 10> kps{{
      {"base_pos_x", {0.15, 0.05, 0.0}, Vec3::UnitX()},
      {"base_neg_x", {-0.15, -0.05, 0.0}, -Vec3::UnitX()},
      {"base_pos_y", {0.08, 0.10, -0.03}, Vec3::UnitY()},
      {"base_neg_y", {-0.08, -0.10, 0.03}, -Vec3::UnitY()},
      {"base_bottom", {0.10, 0.05, kBottom}, -Vec3::UnitZ()},
      {"base_top_a", {0.12, -0.07, 0.075}, Vec3::UnitZ()},
      {"base_top_b", {-0.12, 0.07, 0.075}, Vec3::UnitZ()},
      {"riser_top", {0.03, 0.02, 0.155}, Vec3::UnitZ()},
      {"riser_pos_x", {0.06, -0.02, 0.12}, Vec3::UnitX()},
      {"riser_neg_y", {-0.03, -0.05, 0.11}, -Vec3::UnitY()},
  }};
  obj.keypoints.points.resize(3, kps.size());
  Points3 normals(3, kps.size());
  for (std::size_t i = 0; i < kps.size(); ++i) {
    obj.keypoints.names.emplace_back(kps[i].name);
    obj.keypoints.points.col(static_cast<Eigen::Index>(i)) = kps[i].p;
    normals.col(static_cast<Eigen::Index>(i)) = kps[i].n;
  }
  obj.keypoints.normals = normals;
  return obj;
}

SurfaceModel make_scene(const SyntheticObject& object) {
  const double h = 1.5;
  const std::vector<Vec3> verts{{-h, -h, kBottom}, {h, -h, kBottom}, {h, h, kBottom}, {-h, h, kBottom}};
  return SurfaceModel::merge(object.mesh, mesh_of(verts, {{0, 1, 2}, {0, 2, 3}}));
}

WeakCamera weak_camera_of(const RigidTransform& pose, const CameraIntrinsics& k) {
  const Vec3& t = pose.translation;
  WeakCamera cam;
  cam.s = k.fx / t.z();
  cam.rbar = pose.rotation.top_rows();
  cam.tbar = {k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy};
  return cam;
}

KeypointObservations weak_observations(const SyntheticFrame& frame, const CameraIntrinsics& k) {
  KeypointObservations obs;
  obs.w = project_weak(frame.shape, weak_camera_of(frame.pose, k));
  obs.d = Eigen::VectorXd::Ones(frame.shape.cols());
  obs.names = frame.obs.names;
  return obs;
}

HeatmapStack heatmaps_for(const KeypointObservations& obs, const SynthConfig& cfg) {
  return synth_heatmap_stack(obs.w, obs.d, obs.names, cfg.k.width, cfg.k.height, cfg.heatmap_scale);
}

SyntheticScenario make_scenario(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticScenario sc;
  sc.config = cfg;
  sc.object = make_object();
  const Points3& base = sc.object.keypoints.points;
  const Eigen::Index p = base.cols();

  Rng shape_rng = stream(cfg.seed, 0x5a5a);
  const Points3 dirs = deformation_directions(shape_rng, base, cfg.modes);
  for (int n = 0; n < cfg.instances; ++n) {
    Points3 x = base;
    for (int j = 0; j < cfg.modes; ++j) {
      x += (0.04 / std::pow(2.0, j)) * normal(shape_rng) * dirs.middleCols(j * p, p);
    }
    sc.instances.push_back(x);
  }
  PcaSelection sel;
  sel.k = cfg.modes;
  sc.basis = build_pca_basis(sc.instances, sc.object.keypoints.names, sel);

  sc.frames.resize(static_cast<std::size_t>(cfg.frames));
  for (int f = 0; f < cfg.frames; ++f) {
    Rng rng = stream(cfg.seed, 0x1000, static_cast<std::uint64_t>(f));
    SyntheticFrame& fr = sc.frames[static_cast<std::size_t>(f)];
    fr.frame_id = f;
    fr.pose = sample_pose(rng, cfg);
    fr.c.resize(sc.basis.num_modes());
    for (int j = 0; j < sc.basis.num_modes(); ++j) {
      fr.c(j) = std::sqrt(sc.basis.eigenvalues[static_cast<std::size_t>(j)]) * normal(rng);
    }
    fr.shape = instantiate(sc.basis, fr.c);

    const Vec3 w = random_direction(rng) * uniform(rng, 0.0, cfg.drift_deg) * kDeg;
    const Vec3 t = random_direction(rng) * uniform(rng, 0.0, cfg.drift_m);
    fr.drifted_pose = RigidTransform{so3_exp(w), t} * fr.pose;

    fr.obs.w = project_full(fr.shape, fr.pose, cfg.k);
    fr.obs.d = Eigen::VectorXd::Constant(p, cfg.noise.inlier_confidence);
    fr.obs.names = sc.basis.names;
    fr.outlier.assign(static_cast<std::size_t>(p), false);
    std::vector<int> order(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_out = static_cast<std::size_t>(std::lround(cfg.noise.outlier_fraction * static_cast<double>(p)));
    for (std::size_t j = 0; j < n_out; ++j) fr.outlier[static_cast<std::size_t>(order[j])] = true;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (fr.outlier[static_cast<std::size_t>(i)]) {
        fr.obs.w(0, i) = uniform(rng, 0.0, cfg.k.width - 1.0);
        fr.obs.w(1, i) = uniform(rng, 0.0, cfg.k.height - 1.0);
        fr.obs.d(i) = cfg.noise.outlier_confidence;
      } else if (cfg.noise.pixel_sigma > 0.0) {
        fr.obs.w(0, i) += cfg.noise.pixel_sigma * normal(rng);
        fr.obs.w(1, i) += cfg.noise.pixel_sigma * normal(rng);
      }
    }
  }
  return sc;
}

DepthImage real_depth(const SyntheticScenario& sc, const SurfaceModel& scene, const SyntheticFrame& frame) {
  return render_depth(scene, frame.pose, sc.config.k);
}

void write_scenario(const SyntheticScenario& sc, const std::filesystem::path& dir, bool heatmaps, bool depth) {
  namespace fs = std::filesystem;
  const SynthConfig& cfg = sc.config;
  fs::create_directories(dir);
  for (const char* sub : {"observations", "gt", "instances"}) fs::create_directories(dir / sub);
  if (heatmaps) fs::create_directories(dir / "heatmaps");
  if (depth) fs::create_directories(dir / "depth");

  Json meta;
  meta["seed"] = cfg.seed;
  meta["frames"] = cfg.frames;
  meta["noise"] = {{"pixel_sigma", cfg.noise.pixel_sigma},
                   {"outlier_fraction", cfg.noise.outlier_fraction},
                   {"inlier_confidence", cfg.noise.inlier_confidence},
                   {"outlier_confidence", cfg.noise.outlier_confidence}};
  meta["instances"] = cfg.instances;
  meta["modes"] = cfg.modes;
  meta["distance"] = {cfg.min_distance, cfg.max_distance};
  meta["drift"] = {{"deg", cfg.drift_deg}, {"m", cfg.drift_m}};
  meta["heatmap_scale"] = cfg.heatmap_scale;
  write_json(dir / "scenario.json", meta);

  write_json(dir / "basis.json", to_json(sc.basis));
  write_json(dir / "intrinsics.json", to_json(cfg.k));
  write_json(dir / "keypoints3d.json", to_json(sc.object.keypoints));
  // both boxes are centred on the z axis, so the mesh is invariant under a half turn about it
  write_json(dir / "symmetries.json",
             to_json(SymmetrySet::from({RigidTransform{so3_exp(Vec3(0.0, 0.0, std::numbers::pi)), Vec3::Zero()}})));
  write_ply(dir / "model.ply", sc.object.mesh);
  const SurfaceModel scene = make_scene(sc.object);
  write_ply(dir / "scene.ply", scene);
  for (std::size_t n = 0; n < sc.instances.size(); ++n) {
    Keypoints3D kp;
    kp.points = sc.instances[n];
    kp.names = sc.basis.names;
    char buf[32];
    std::snprintf(buf, sizeof buf, "instance_%03zu.json", n);
    write_json(dir / "instances" / buf, to_json(kp));
  }

  std::vector<TrajectoryEntry> truth, drifted;
  for (const auto& f : sc.frames) {
    truth.push_back({f.frame_id / 30.0, f.pose});
    drifted.push_back({f.frame_id / 30.0, f.drifted_pose});
  }
  write_tum(dir / "trajectory_gt.txt", truth);
  write_tum(dir / "trajectory.txt", drifted);

  const auto nf = static_cast<long>(sc.frames.size());
  std::vector<std::exception_ptr> failures(sc.frames.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < nf; ++i) {
    try {
      const SyntheticFrame& f = sc.frames[static_cast<std::size_t>(i)];
      write_json(dir / "observations" / frame_name(f.frame_id, ".json"), to_json(ObservationFrame{f.frame_id, f.obs}));
      write_json(dir / "gt" / frame_name(f.frame_id, ".json"), to_json(GroundTruth{f.frame_id, f.pose, f.c}));
      if (heatmaps) write_khm(dir / "heatmaps" / frame_name(f.frame_id, ".khm"), heatmaps_for(f.obs, cfg));
      if (depth) write_pfm(dir / "depth" / frame_name(f.frame_id, ".pfm"), real_depth(sc, scene, f));
    } catch (...) {
      failures[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : failures) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace kpose
