#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "kpose/metrics.hpp"
#include "kpose/pose_solver.hpp"
#include "test_util.hpp"

using namespace kpose;
using kpose::testing::deg;
using kpose::testing::random_points;
using kpose::testing::random_rotation;

namespace {

constexpr int kP = 10;

ShapeBasis make_basis(std::mt19937_64& rng, int k = 2) {
  const Points3 base = random_points(rng, kP, 0.15);
  std::vector<Points3> inst;
  for (int i = 0; i < 12; ++i) inst.push_back(base + random_points(rng, kP, 0.01));
  std::vector<std::string> names;
  for (int i = 0; i < kP; ++i) names.push_back("kp" + std::to_string(i));
  return build_pca_basis(inst, names, {.k = k});
}

Eigen::VectorXd random_c(std::mt19937_64& rng, const ShapeBasis& b) {
  std::normal_distribution<double> n;
  Eigen::VectorXd c(b.num_modes());
  for (int i = 0; i < b.num_modes(); ++i) c(i) = std::sqrt(b.eigenvalues[i]) * n(rng);
  return c;
}

WeakCamera random_weak(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> s(200.0, 400.0), t(100.0, 400.0);
  return {s(rng), random_rotation(rng).top_rows(), Vec2(t(rng), t(rng))};
}

KeypointObservations observe(const Points2& w) {
  return {w, Eigen::VectorXd::Ones(w.cols()), {}};
}

CameraIntrinsics camera() { return {525.0, 525.0, 319.5, 239.5, 640, 480}; }

RigidTransform random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-0.2, 0.2), z(1.2, 2.5);
  return {random_rotation(rng), Vec3(xy(rng), xy(rng), z(rng))};
}

void expect_monotone(const Trace& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    ASSERT_LE(trace[i].cost, trace[i - 1].cost)
        << "increase at entry " << i << " (" << to_string(trace[i].block) << ")";
  }
}

SolverConfig exact_cfg() {
  SolverConfig cfg;
  cfg.lambda = 0.0;
  return cfg;
}

}  // namespace

TEST(CostWeak, ExactFitIsZero) {
  std::mt19937_64 rng(1);
  const ShapeBasis b = make_basis(rng);
  const WeakPose pose{random_weak(rng), random_c(rng, b)};
  const auto obs = observe(project_weak(instantiate(b, pose.c), pose.cam));
  EXPECT_LT(cost_weak(obs, b, pose, 0.0), 1e-20);
}

TEST(CostWeak, ZeroWeightsLeaveRegularizerOnly) {
  std::mt19937_64 rng(2);
  const ShapeBasis b = make_basis(rng);
  const WeakPose pose{random_weak(rng), Eigen::Vector2d(0.3, -2.0)};
  KeypointObservations obs = observe(random_points(rng, kP).topRows<2>() * 100.0);
  obs.d.setZero();
  EXPECT_DOUBLE_EQ(cost_weak(obs, b, pose, 0.7), 0.7 * (0.09 + 4.0) / 2.0);
}

TEST(CostWeak, OnePointResidual) {
  ShapeBasis b;
  b.names = {"a"};
  b.b0 = Points3::Zero(3, 1);
  const WeakPose pose{WeakCamera{}, Eigen::VectorXd()};
  const KeypointObservations obs{Points2(Vec2(3, 4)), Eigen::VectorXd::Ones(1), {}};
  EXPECT_DOUBLE_EQ(cost_weak(obs, b, pose, 1.0), 12.5);
}

TEST(InitWeakConvex, RecoversNoiselessPose) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const ShapeBasis b = make_basis(rng);
    const WeakCamera cam = random_weak(rng);
    const auto obs = observe(project_weak(b.b0, cam));
    const WeakPose init = init_weak_convex(obs, b.b0, 0.0);
    EXPECT_NEAR(init.cam.s, cam.s, 1e-6 * cam.s);
    EXPECT_LT((init.cam.rbar - cam.rbar).norm(), 1e-6);
    EXPECT_LT((init.cam.tbar - cam.tbar).norm(), 1e-6 * cam.tbar.norm());
  }
}

TEST(InitWeakConvex, SpectralPathWithVanishingGamma) {
  std::mt19937_64 rng(4);
  const ShapeBasis b = make_basis(rng);
  const WeakCamera cam = random_weak(rng);
  const auto obs = observe(project_weak(b.b0, cam));
  SolverConfig cfg;
  cfg.prox_iters = 20000;
  const WeakPose init = init_weak_convex(obs, b.b0, 1e-9, cfg);
  EXPECT_NEAR(init.cam.s, cam.s, 1e-6 * cam.s);
  EXPECT_LT((init.cam.rbar - cam.rbar).norm(), 1e-6);
}

TEST(InitWeakConvex, SpectralPenaltyShrinksScale) {
  std::mt19937_64 rng(5);
  const ShapeBasis b = make_basis(rng);
  const auto obs = observe(project_weak(b.b0, random_weak(rng)));
  const double s0 = init_weak_convex(obs, b.b0, 0.0).cam.s;
  const double s1 = init_weak_convex(obs, b.b0, 10.0).cam.s;
  EXPECT_LT(s1, s0);
}

TEST(InitWeakConvex, ConstantDetectionsAreDegenerate) {
  std::mt19937_64 rng(6);
  const ShapeBasis b = make_basis(rng);
  Points3 centred = b.b0.colwise() - b.b0.rowwise().mean();
  Points2 w(2, kP);
  w.colwise() = Vec2(120.0, 80.0);
  try {
    init_weak_convex(observe(w), centred, 0.0);
    FAIL() << "expected degenerate-init";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInit);
  }
}

TEST(InitWeakConvex, CollinearDetectionsAreDegenerate) {
  std::mt19937_64 rng(7);
  const ShapeBasis b = make_basis(rng);
  Points2 w(2, kP);
  for (int i = 0; i < kP; ++i) w.col(i) = Vec2(10.0 * i, 5.0 * i + 3.0);
  EXPECT_THROW(init_weak_convex(observe(w), b.b0, 0.0), Error);
}

TEST(InitWeakConvex, PixelScalingIsHomogeneous) {
  std::mt19937_64 rng(8);
  const ShapeBasis b = make_basis(rng);
  const auto obs = observe(project_weak(b.b0, random_weak(rng)) + random_points(rng, kP).topRows<2>());
  auto obs2 = obs;
  obs2.w *= 2.0;
  const WeakPose a = init_weak_convex(obs, b.b0, 0.0), c = init_weak_convex(obs2, b.b0, 0.0);
  EXPECT_NEAR(c.cam.s, 2.0 * a.cam.s, 1e-6 * a.cam.s);
  EXPECT_LT((c.cam.tbar - 2.0 * a.cam.tbar).norm(), 1e-6 * a.cam.tbar.norm());
  EXPECT_LT((c.cam.rbar - a.cam.rbar).norm(), 1e-6);
}

TEST(InitWeakConvex, TooFewKeypoints) {
  std::mt19937_64 rng(9);
  const ShapeBasis b = make_basis(rng);
  auto obs = observe(project_weak(b.b0, random_weak(rng)));
  obs.d.setZero();
  obs.d.head(3).setOnes();
  try {
    init_weak_convex(obs, b.b0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewKeypoints);
  }
}

TEST(SolveWeak, NoiselessRecovery) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const ShapeBasis b = make_basis(rng);
    const WeakPose truth{random_weak(rng), random_c(rng, b)};
    const auto obs = observe(project_weak(instantiate(b, truth.c), truth.cam));
    const WeakSolution sol = solve_weak(obs, b, exact_cfg());
    EXPECT_LT(sol.cost, 1e-10);
    EXPECT_LT(deg(rotation_geodesic(lift_rotation(sol.pose.cam.rbar), lift_rotation(truth.cam.rbar))), 0.5);
    EXPECT_LT((sol.pose.c - truth.c).cwiseAbs().maxCoeff(), 1e-4);
    expect_monotone(sol.trace);
  }
}

TEST(SolveWeak, RotationStaysFeasibleAndDescentIsMonotone) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int t = 0; t < 20; ++t) {
    const ShapeBasis b = make_basis(rng);
    const WeakPose truth{random_weak(rng), random_c(rng, b)};
    auto obs = observe(project_weak(instantiate(b, truth.c), truth.cam));
    for (int i = 0; i < kP; ++i) obs.w.col(i) += Vec2(noise(rng), noise(rng));
    std::uniform_real_distribution<double> d(0.05, 1.0);
    for (int i = 0; i < kP; ++i) obs.d(i) = d(rng);
    SolverConfig cfg;
    cfg.lambda = 1.0;
    const WeakSolution sol = solve_weak(obs, b, cfg);
    expect_monotone(sol.trace);
    EXPECT_NO_THROW(sol.pose.cam.validate());
    EXPECT_TRUE(is_rotation(lift_rotation(sol.pose.cam.rbar).matrix()));
    EXPECT_NEAR(sol.trace.back().cost, sol.cost, 1e-12 * std::max(1.0, sol.cost));
  }
}

TEST(SolveWeak, ZeroWeightColumnDoesNotMatter) {
  std::mt19937_64 rng(12);
  const ShapeBasis b = make_basis(rng);
  const WeakPose truth{random_weak(rng), random_c(rng, b)};
  auto obs = observe(project_weak(instantiate(b, truth.c), truth.cam) + random_points(rng, kP).topRows<2>());
  obs.d(4) = 0.0;
  auto moved = obs;
  moved.w.col(4) = Vec2(-1e4, 3e5);
  SolverConfig cfg;
  const WeakSolution a = solve_weak(obs, b, cfg), c = solve_weak(moved, b, cfg);
  EXPECT_EQ(a.pose.cam.s, c.pose.cam.s);
  EXPECT_EQ(a.pose.cam.rbar, c.pose.cam.rbar);
  EXPECT_EQ(a.pose.cam.tbar, c.pose.cam.tbar);
  EXPECT_EQ(a.pose.c, c.pose.c);
  EXPECT_EQ(a.cost, c.cost);

  const CameraIntrinsics k = camera();
  const FullSolution fa = solve_full(obs, k, b, cfg, a.pose), fc = solve_full(moved, k, b, cfg, c.pose);
  EXPECT_EQ(fa.pose.pose.rotation.matrix(), fc.pose.pose.rotation.matrix());
  EXPECT_EQ(fa.pose.pose.translation, fc.pose.pose.translation);
  EXPECT_EQ(fa.pose.c, fc.pose.c);
  for (int i = 0; i < kP; ++i) {
    if (i != 4) {
      EXPECT_EQ(fa.pose.z(i), fc.pose.z(i));
    }
  }
}

TEST(SolveWeak, PixelScalingAtZeroLambda) {
  std::mt19937_64 rng(13);
  const ShapeBasis b = make_basis(rng);
  const WeakPose truth{random_weak(rng), random_c(rng, b)};
  auto obs = observe(project_weak(instantiate(b, truth.c), truth.cam) +
                     2.0 * random_points(rng, kP).topRows<2>());
  auto scaled = obs;
  const double alpha = 3.0;
  scaled.w *= alpha;
  SolverConfig cfg = exact_cfg();
  cfg.rel_tol = 1e-15;
  cfg.max_iters = 20000;
  const WeakSolution a = solve_weak(obs, b, cfg), c = solve_weak(scaled, b, cfg);
  EXPECT_NEAR(c.pose.cam.s, alpha * a.pose.cam.s, 1e-6 * a.pose.cam.s);
  EXPECT_LT((c.pose.cam.tbar - alpha * a.pose.cam.tbar).norm(), 1e-6 * a.pose.cam.tbar.norm());
  EXPECT_LT((c.pose.cam.rbar - a.pose.cam.rbar).norm(), 1e-6);
  EXPECT_LT((c.pose.c - a.pose.c).norm(), 1e-6 * std::max(1.0, a.pose.c.norm()));
}

TEST(SolveWeak, CoplanarFrontoParallelIsFlagged) {
  ShapeBasis b;
  b.names = {"a", "b", "c", "d"};
  b.b0.resize(3, 4);
  b.b0 << -0.1, 0.1, 0.1, -0.1,  //
      -0.1, -0.1, 0.1, 0.1,      //
      0.0, 0.0, 0.0, 0.0;
  const WeakCamera cam{300.0, Mat23::Identity(), Vec2(320, 240)};
  const WeakSolution sol = solve_weak(observe(project_weak(b.b0, cam)), b, SolverConfig{});
  EXPECT_TRUE(sol.flags.ill_conditioned);
  EXPECT_GT(sol.flags.condition_number, 1e8);
}

TEST(SolveWeak, WellSpreadPointsAreNotFlagged) {
  std::mt19937_64 rng(14);
  const ShapeBasis b = make_basis(rng);
  const WeakCamera cam = random_weak(rng);
  const WeakSolution sol = solve_weak(observe(project_weak(b.b0, cam)), b, SolverConfig{});
  EXPECT_FALSE(sol.flags.ill_conditioned);
}

// Directional derivative along tangent vectors vs central differences through the retraction.
TEST(WeakGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    const ShapeBasis b = make_basis(rng);
    WeakPose pose{random_weak(rng), random_c(rng, b)};
    auto obs = observe(project_weak(instantiate(b, random_c(rng, b)), random_weak(rng)));
    for (int i = 0; i < kP; ++i) obs.d(i) = 0.1 + 0.9 * std::abs(n(rng)) / 3.0;
    const Mat23 g = weak_rotation_gradient(obs, b, pose);
    // Tangent direction at rbar: xi = A rbar - rbar A' style skew combinations.
    const Mat3 omega = hat(Vec3(n(rng), n(rng), n(rng)));
    const Mat23 xi = pose.cam.rbar * omega;
    const double h = 1e-6;
    WeakPose plus = pose, minus = pose;
    plus.cam.rbar = polar_rows(pose.cam.rbar + h * xi);
    minus.cam.rbar = polar_rows(pose.cam.rbar - h * xi);
    const double fd = (cost_weak(obs, b, plus, 0.0) - cost_weak(obs, b, minus, 0.0)) / (2.0 * h);
    const double an = (g.array() * xi.array()).sum();
    EXPECT_NEAR(an, fd, 1e-5 * std::max(std::abs(fd), 1e-3 * g.norm() * xi.norm())) << t;
  }
}

TEST(WeakGradient, IsTangent) {
  std::mt19937_64 rng(16);
  const ShapeBasis b = make_basis(rng);
  const WeakPose pose{random_weak(rng), random_c(rng, b)};
  const auto obs = observe(project_weak(instantiate(b, random_c(rng, b)), random_weak(rng)));
  const Mat23 g = weak_rotation_gradient(obs, b, pose);
  const Eigen::Matrix2d sym = g * pose.cam.rbar.transpose() + pose.cam.rbar * g.transpose();
  EXPECT_LT(sym.norm(), 1e-9 * std::max(1.0, g.norm()));
}

TEST(SolveFull, NoiselessRecovery) {
  std::mt19937_64 rng(17);
  const CameraIntrinsics k = camera();
  for (int t = 0; t < 20; ++t) {
    const ShapeBasis b = make_basis(rng);
    const RigidTransform pose = random_pose(rng);
    const Eigen::VectorXd c0 = random_c(rng, b);
    const auto obs = observe(project_full(instantiate(b, c0), pose, k));
    const SolverConfig cfg = exact_cfg();
    const WeakSolution weak = solve_weak(obs, b, cfg);
    const FullSolution full = solve_full(obs, k, b, cfg, weak.pose);
    EXPECT_LT(deg(rotation_geodesic(full.pose.pose.rotation, pose.rotation)), 0.5);
    EXPECT_LT(translation_error(full.pose.pose.translation, pose.translation), 1e-3 * pose.translation.norm());
    EXPECT_LT(full.cost, 1e-8);
    expect_monotone(full.trace);
    EXPECT_TRUE(is_rotation(full.pose.pose.rotation.matrix()));
  }
}

TEST(SolveFull, RigidBasisDepthsMatchTruth) {
  std::mt19937_64 rng(18);
  const CameraIntrinsics k = camera();
  const ShapeBasis rigid = make_basis(rng, 0);
  for (int t = 0; t < 10; ++t) {
    const RigidTransform pose = random_pose(rng);
    const auto obs = observe(project_full(rigid.b0, pose, k));
    const SolverConfig cfg = exact_cfg();
    const FullSolution full = solve_full(obs, k, rigid, cfg, solve_weak(obs, rigid, cfg).pose);
    const Eigen::VectorXd truth = pose.apply(rigid.b0).row(2).transpose();
    for (int i = 0; i < kP; ++i) EXPECT_NEAR(full.pose.z(i), truth(i), 1e-6 * truth(i));
  }
}

TEST(SolveFull, NormalizedCoordinatesAbsorbIntrinsics) {
  std::mt19937_64 rng(19);
  const CameraIntrinsics k = camera();
  const CameraIntrinsics k2{2 * k.fx, 2 * k.fy, 2 * k.cx, 2 * k.cy, 2 * k.width, 2 * k.height};
  const ShapeBasis b = make_basis(rng);
  const RigidTransform pose = random_pose(rng);
  auto obs = observe(project_full(instantiate(b, random_c(rng, b)), pose, k) +
                     random_points(rng, kP).topRows<2>());
  auto obs2 = obs;
  obs2.w *= 2.0;
  const SolverConfig cfg = exact_cfg();
  const FullSolution a = solve_full(obs, k, b, cfg, solve_weak(obs, b, cfg).pose);
  const FullSolution c = solve_full(obs2, k2, b, cfg, solve_weak(obs2, b, cfg).pose);
  EXPECT_LT((a.pose.pose.rotation.matrix() - c.pose.pose.rotation.matrix()).norm(), 1e-6);
  EXPECT_LT((a.pose.pose.translation - c.pose.pose.translation).norm(), 1e-6);
  EXPECT_LT((a.pose.c - c.pose.c).norm(), 1e-6);
  EXPECT_LT((a.pose.z - c.pose.z).norm(), 1e-6);
}

TEST(SolveFull, FirstSweepDecreasesFromWeakInit) {
  std::mt19937_64 rng(20);
  const CameraIntrinsics k = camera();
  for (int t = 0; t < 10; ++t) {
    const ShapeBasis b = make_basis(rng);
    const RigidTransform pose = random_pose(rng);
    const auto obs = observe(project_full(instantiate(b, random_c(rng, b)), pose, k));
    const SolverConfig cfg = exact_cfg();
    const WeakSolution weak = solve_weak(obs, b, cfg);
    const FullPose init = full_pose_from_weak(weak.pose, obs, k, b, cfg);
    const double c0 = cost_full(obs, k, b, init, 0.0);
    ASSERT_TRUE(std::isfinite(c0));
    const FullSolution full = solve_full(obs, k, b, cfg, weak.pose);
    double after_first = c0;
    for (const auto& e : full.trace) {
      if (e.iteration == 1) after_first = e.cost;
    }
    EXPECT_LT(after_first, c0);
  }
}

TEST(SolveFull, InitialRotationPutsObjectInFront) {
  std::mt19937_64 rng(21);
  const CameraIntrinsics k = camera();
  const ShapeBasis b = make_basis(rng);
  for (int t = 0; t < 10; ++t) {
    const RigidTransform pose = random_pose(rng);
    const auto obs = observe(project_full(b.b0, pose, k));
    const SolverConfig cfg = exact_cfg();
    const FullPose init = full_pose_from_weak(solve_weak(obs, b, cfg).pose, obs, k, b, cfg);
    EXPECT_GT(init.pose.apply(b.b0).row(2).mean(), 0.0);
    EXPECT_NEAR(init.pose.translation.z(), k.fx / solve_weak(obs, b, cfg).pose.cam.s, 1e-9);
  }
}

TEST(EstimatePose, WithoutIntrinsicsNoFullPose) {
  std::mt19937_64 rng(22);
  const ShapeBasis b = make_basis(rng);
  const auto obs = observe(project_full(b.b0, random_pose(rng), camera()));
  const PoseEstimate est = estimate_pose(obs, b, std::nullopt);
  EXPECT_FALSE(est.full.has_value());
  EXPECT_EQ(est.weak_residuals_px.size(), kP);
}

TEST(EstimatePose, FlatHeatmapsAreTooFewKeypoints) {
  HeatmapStack stack;
  for (int i = 0; i < kP; ++i) stack.channels.push_back({Grid::Zero(30, 40), "kp" + std::to_string(i)});
  std::mt19937_64 rng(23);
  const ShapeBasis b = make_basis(rng);
  try {
    estimate_pose(stack, b, camera());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewKeypoints);
  }
}

TEST(EstimatePose, HeatmapsAgreeWithExactObservations) {
  std::mt19937_64 rng(24);
  const CameraIntrinsics k = camera();
  const ShapeBasis b = make_basis(rng);
  const RigidTransform pose = random_pose(rng);
  const Points2 w = project_full(instantiate(b, random_c(rng, b)), pose, k);
  const auto obs = observe(w);
  const HeatmapStack stack = synth_heatmap_stack(w, Eigen::VectorXd::Ones(kP), b.names, k.width, k.height, 1);
  const KeypointObservations peaks = observations_from_heatmaps(stack);
  EXPECT_LE((peaks.w - w).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_GE(peaks.d.minCoeff(), std::exp(-0.25));  // at worst half a pixel off on both axes

  const PoseEstimate exact = estimate_pose(obs, b, k), hm = estimate_pose(stack, b, k);
  const Points2 pe = project_full(instantiate(b, exact.full->pose.c), exact.full->pose.pose, k);
  const Points2 ph = project_full(instantiate(b, hm.full->pose.c), hm.full->pose.pose, k);
  EXPECT_LT((pe - ph).colwise().norm().maxCoeff(), 1.0);
  EXPECT_LT(deg(rotation_geodesic(exact.full->pose.pose.rotation, pose.rotation)), 0.5);
}

TEST(EstimatePose, FloorCountsConfidentKeypoints) {
  std::mt19937_64 rng(25);
  const ShapeBasis b = make_basis(rng);
  auto obs = observe(project_full(b.b0, random_pose(rng), camera()));
  obs.d.setConstant(0.005);
  obs.d.head(3).setOnes();
  EXPECT_THROW(estimate_pose(obs, b, camera()), Error);
  obs.d(3) = 0.5;
  EXPECT_NO_THROW(estimate_pose(obs, b, camera()));
}

TEST(SolverConfig, Validation) {
  SolverConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lambda = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.max_iters = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.rel_tol = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}
