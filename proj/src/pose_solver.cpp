#include "kpose/pose_solver.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

namespace kpose {

const char* to_string(Block b) {
  switch (b) {
    case Block::Init: return "init";
    case Block::Scale: return "scale";
    case Block::Translation: return "translation";
    case Block::Shape: return "shape";
    case Block::Rotation: return "rotation";
    case Block::Depth: return "depth";
  }
  return "unknown";
}

void KeypointObservations::validate() const {
  if (d.size() != w.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one confidence per keypoint required");
  }
  if (!names.empty() && static_cast<Eigen::Index>(names.size()) != w.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one name per keypoint required");
  }
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) >= 0.0) || !std::isfinite(d(i))) {
      throw Error(ErrorCode::InvalidArgument, "confidences must be finite and nonnegative");
    }
    if (d(i) > 0.0 && !w.col(i).allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "weighted keypoint with non-finite pixel");
    }
  }
}

int KeypointObservations::count_above(double floor) const {
  return static_cast<int>((d.array() > floor).count());
}

void SolverConfig::validate() const {
  if (!(lambda >= 0.0) || !(gamma >= 0.0) || max_iters < 1 || !(rel_tol > 0.0) ||
      !(line_search_shrink > 0.0 && line_search_shrink < 1.0) || max_line_search < 1 ||
      !(z_min > 0.0) || prox_iters < 1 || !(coplanarity_tol >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid solver configuration");
  }
}

namespace {

// The solvers only ever see weighted columns; zero-confidence detections
// cannot influence the result.
struct Problem {
  Points2 w;
  Eigen::VectorXd d;
  Points3 b0;
  std::vector<Points3> modes;
  std::vector<Eigen::Index> index;

  int k() const { return static_cast<int>(modes.size()); }
  Eigen::Index p() const { return w.cols(); }

  Points3 shape(const ShapeCoefficients& c) const {
    Points3 s = b0;
    for (int i = 0; i < k(); ++i) s += c(i) * modes[static_cast<std::size_t>(i)];
    return s;
  }
};

void check_sizes(const KeypointObservations& obs, const ShapeBasis& basis) {
  obs.validate();
  if (basis.num_points() != obs.size()) {
    throw Error(ErrorCode::DimensionMismatch, "observations and basis differ in keypoint count");
  }
}

Problem compress(const KeypointObservations& obs, const ShapeBasis& basis) {
  check_sizes(obs, basis);
  Problem pr;
  for (Eigen::Index i = 0; i < obs.size(); ++i) {
    if (obs.d(i) > 0.0) pr.index.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(pr.index.size());
  pr.w.resize(2, n);
  pr.d.resize(n);
  pr.b0.resize(3, n);
  pr.modes.assign(basis.modes.size(), Points3(3, n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index i = pr.index[static_cast<std::size_t>(j)];
    pr.w.col(j) = obs.w.col(i);
    pr.d(j) = obs.d(i);
    pr.b0.col(j) = basis.b0.col(i);
    for (std::size_t m = 0; m < basis.modes.size(); ++m) pr.modes[m].col(j) = basis.modes[m].col(i);
  }
  return pr;
}

double weighted_half_sq(const Eigen::MatrixXd& r, const Eigen::VectorXd& d) {
  return 0.5 * (r.colwise().squaredNorm().transpose().array() * d.array()).sum();
}

double weak_data_term(const Problem& pr, const Points3& s, const WeakCamera& cam) {
  return weighted_half_sq(pr.w - project_weak(s, cam), pr.d);
}

double weak_objective(const Problem& pr, const Points3& s, const WeakCamera& cam,
                      const ShapeCoefficients& c, double lambda) {
  return weak_data_term(pr, s, cam) + 0.5 * lambda * c.squaredNorm();
}

Eigen::Vector3d weighted_mean(const Points3& x, const Eigen::VectorXd& d) {
  return x * d / d.sum();
}

double scatter_condition(const Points3& b0, const Eigen::VectorXd& d) {
  const Points3 centered = b0.colwise() - weighted_mean(b0, d);
  const Mat3 scatter = centered * d.asDiagonal() * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = std::max(es.eigenvalues().minCoeff(), 0.0);
  if (!(lmax > 0.0)) return std::numeric_limits<double>::infinity();
  return lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
}

constexpr double kTruncateCondition = 1e10;

// Minimizer of x^T n x / 2 - rhs^T x. Beyond kTruncateCondition the smallest
// eigen-directions are dropped, giving the minimum-norm solution.
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& n, const Eigen::VectorXd& rhs,
                                       double& condition) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(n);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lmax = ev.maxCoeff();
  const double lmin = std::max(ev.minCoeff(), 0.0);
  condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
  if (!(lmax > 0.0)) return x;
  const Eigen::VectorXd proj = es.eigenvectors().transpose() * rhs;
  for (Eigen::Index j = 0; j < ev.size(); ++j) {
    if (ev(j) > lmax / kTruncateCondition) x += es.eigenvectors().col(j) * (proj(j) / ev(j));
  }
  return x;
}

// Proximal operator of t * |M|_2 on a 2x3 matrix: the singular values minus
// their projection onto the l1 ball of radius t.
Mat23 prox_spectral(const Mat23& m, double t) {
  Eigen::JacobiSVD<Mat23> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s1 = svd.singularValues()(0);
  const double s2 = svd.singularValues()(1);
  double r1 = 0.0;
  double r2 = 0.0;
  if (s1 + s2 > t) {
    if (s1 - s2 >= t) {
      r1 = s1 - t;
      r2 = s2;
    } else {
      r1 = r2 = 0.5 * (s1 + s2 - t);
    }
  }
  Eigen::Matrix<double, 2, 2> sig = Eigen::Vector2d(r1, r2).asDiagonal();
  return svd.matrixU() * sig * svd.matrixV().leftCols<2>().transpose();
}

WeakInit init_weak(const Problem& pr, double gamma, const SolverConfig& cfg) {
  if (pr.p() < 4) {
    throw Error(ErrorCode::TooFewKeypoints, "convex init needs at least 4 weighted keypoints");
  }
  const double dsum = pr.d.sum();
  const Eigen::Vector2d wbar = pr.w * pr.d / dsum;
  const Eigen::Vector3d bbar = pr.b0 * pr.d / dsum;
  const Points2 wc = pr.w.colwise() - wbar;
  const Points3 bc = pr.b0.colwise() - bbar;

  const Eigen::VectorXd sqrt_d = pr.d.cwiseSqrt();
  Eigen::JacobiSVD<Eigen::MatrixXd> wsvd(wc * sqrt_d.asDiagonal());
  const auto& wsv = wsvd.singularValues();
  if (!(wsv(0) > 1e-12 * std::max(1.0, wbar.norm())) || wsv(1) <= 1e-9 * wsv(0)) {
    throw Error(ErrorCode::DegenerateInit, "weighted detections are collinear");
  }

  const Mat3 scatter = bc * pr.d.asDiagonal() * bc.transpose();
  const Eigen::Matrix<double, 2, 3> cross = wc * pr.d.asDiagonal() * bc.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) throw Error(ErrorCode::DegenerateInit, "model keypoints coincide");
  Mat3 pinv = Mat3::Zero();
  for (int j = 0; j < 3; ++j) {
    const double e = es.eigenvalues()(j);
    if (e > lmax * 1e-12) {
      pinv += es.eigenvectors().col(j) * es.eigenvectors().col(j).transpose() / e;
    }
  }
  WeakInit out;
  const double lmin = std::max(es.eigenvalues().minCoeff(), 0.0);
  out.condition_number = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();

  Mat23 m = cross * pinv;
  if (gamma > 0.0) {
    const double step = 1.0 / lmax;
    for (int it = 0; it < cfg.prox_iters; ++it) {
      const Mat23 grad = m * scatter - cross;
      m = prox_spectral(m - step * grad, gamma * step);
    }
  }

  Eigen::JacobiSVD<Mat23> msvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& msv = msvd.singularValues();
  const double s = 0.5 * (msv(0) + msv(1));
  if (!(s > 1e-12 * std::max(1.0, wbar.norm()))) {
    throw Error(ErrorCode::DegenerateInit, "weak-perspective scale collapsed to zero");
  }
  out.pose.cam.s = s;
  out.pose.cam.rbar = msvd.matrixU() * msvd.matrixV().leftCols<2>().transpose();
  out.pose.cam.tbar = wbar - s * out.pose.cam.rbar * bbar;
  out.pose.c = ShapeCoefficients::Zero(pr.k());
  return out;
}

Mat23 rotation_gradient(const Problem& pr, const Points3& s, const WeakCamera& cam) {
  const Points2 e = pr.w - project_weak(s, cam);
  const Mat23 g = -cam.s * (e * pr.d.asDiagonal() * s.transpose());
  const Eigen::Matrix2d sym = 0.5 * (g * cam.rbar.transpose() + cam.rbar * g.transpose());
  return g - sym * cam.rbar;
}

}  // namespace

double cost_weak(const KeypointObservations& obs, const ShapeBasis& basis,
                 const WeakPose& pose, double lambda) {
  const Problem pr = compress(obs, basis);
  return weak_objective(pr, pr.shape(pose.c), pose.cam, pose.c, lambda);
}

double cost_full(const KeypointObservations& obs, const CameraIntrinsics& k,
                 const ShapeBasis& basis, const FullPose& pose, double lambda) {
  check_sizes(obs, basis);
  if (pose.z.size() != obs.size()) throw Error(ErrorCode::DimensionMismatch, "one depth per keypoint required");
  const Points3 wn = normalize_pixels(obs.w, k);
  const Points3 s = instantiate(basis, pose.c);
  double cost = 0.0;
  for (Eigen::Index i = 0; i < obs.size(); ++i) {
    if (obs.d(i) > 0.0) {
      const Vec3 r = wn.col(i) * pose.z(i) - pose.pose.apply(Vec3(s.col(i)));
      cost += 0.5 * obs.d(i) * r.squaredNorm();
    }
  }
  return cost + 0.5 * lambda * pose.c.squaredNorm();
}

Mat23 weak_rotation_gradient(const KeypointObservations& obs, const ShapeBasis& basis,
                             const WeakPose& pose) {
  const Problem pr = compress(obs, basis);
  return rotation_gradient(pr, pr.shape(pose.c), pose.cam);
}

WeakInit init_weak_convex_ex(const KeypointObservations& obs, const Points3& b0,
                             double gamma, const SolverConfig& cfg) {
  ShapeBasis rigid;
  rigid.b0 = b0;
  rigid.names.resize(static_cast<std::size_t>(b0.cols()));
  return init_weak(compress(obs, rigid), gamma, cfg);
}

WeakSolution solve_weak(const KeypointObservations& obs, const ShapeBasis& basis,
                        const SolverConfig& cfg, const std::optional<WeakPose>& init) {
  cfg.validate();
  const Problem pr = compress(obs, basis);
  if (pr.p() < 4) {
    throw Error(ErrorCode::TooFewKeypoints, "weak-perspective solve needs at least 4 weighted keypoints");
  }
  const int k = pr.k();
  const double ill_threshold = cfg.coplanarity_tol > 0.0 ? 1.0 / cfg.coplanarity_tol
                                                         : std::numeric_limits<double>::infinity();

  WeakSolution sol;
  WeakPose x;
  if (init) {
    x = *init;
    sol.flags.condition_number = scatter_condition(pr.b0, pr.d);
  } else {
    WeakInit wi = init_weak(pr, cfg.gamma, cfg);
    x = wi.pose;
    sol.flags.condition_number = wi.condition_number;
  }
  if (x.c.size() != k) x.c = ShapeCoefficients::Zero(k);

  Points3 s = pr.shape(x.c);
  double cost = weak_objective(pr, s, x.cam, x.c, cfg.lambda);
  if (!std::isfinite(cost)) {
    throw SolveFailure<WeakPose>("initial weak-perspective cost is not finite", x);
  }
  sol.trace.push_back({0, Block::Init, cost});
  const double dsum = pr.d.sum();

  auto accept = [&](int it, Block block, const WeakPose& cand, const Points3& cand_s) {
    const double c_new = weak_objective(pr, cand_s, cand.cam, cand.c, cfg.lambda);
    if (!std::isfinite(c_new)) {
      throw SolveFailure<WeakPose>("weak-perspective cost became non-finite", x);
    }
    if (c_new <= cost) {
      x = cand;
      s = cand_s;
      cost = c_new;
      sol.trace.push_back({it, block, cost});
    }
  };

  int it = 1;
  for (; it <= cfg.max_iters; ++it) {
    const double prev = cost;

    {  // scale: scalar least squares
      const Points2 proj = x.cam.rbar * s;
      const Points2 e = pr.w.colwise() - x.cam.tbar;
      const double num = (e.cwiseProduct(proj).colwise().sum().transpose().array() * pr.d.array()).sum();
      const double den = (proj.colwise().squaredNorm().transpose().array() * pr.d.array()).sum();
      if (den > 0.0 && num != 0.0) {
        WeakPose cand = x;
        cand.cam.s = num / den;
        if (cand.cam.s < 0.0) {
          // -rbar is rbar turned by pi about the optical axis
          cand.cam.s = -cand.cam.s;
          cand.cam.rbar = -cand.cam.rbar;
        }
        accept(it, Block::Scale, cand, s);
      }
    }

    {  // translation: weighted mean residual
      WeakPose cand = x;
      cand.cam.tbar = (pr.w - x.cam.s * x.cam.rbar * s) * pr.d / dsum;
      accept(it, Block::Translation, cand, s);
    }

    if (k > 0) {  // shape: Tikhonov normal equations in projected modes
      const Mat23 sr = x.cam.s * x.cam.rbar;
      const Points2 r = (pr.w - sr * pr.b0).colwise() - x.cam.tbar;
      Eigen::MatrixXd a(2 * pr.p(), k);
      for (int j = 0; j < k; ++j) {
        const Points2 pm = sr * pr.modes[static_cast<std::size_t>(j)];
        a.col(j) = Eigen::Map<const Eigen::VectorXd>(pm.data(), 2 * pr.p());
      }
      Eigen::VectorXd wts(2 * pr.p());
      for (Eigen::Index i = 0; i < pr.p(); ++i) wts(2 * i) = wts(2 * i + 1) = pr.d(i);
      const Eigen::MatrixXd n = a.transpose() * wts.asDiagonal() * a +
                                cfg.lambda * Eigen::MatrixXd::Identity(k, k);
      const Eigen::VectorXd rhs =
          a.transpose() * wts.asDiagonal() * Eigen::Map<const Eigen::VectorXd>(r.data(), 2 * pr.p());
      double cond = 1.0;
      WeakPose cand = x;
      cand.c = solve_normal_equations(n, rhs, cond);
      if (cond > ill_threshold) sol.flags.ill_conditioned = true;
      accept(it, Block::Shape, cand, pr.shape(cand.c));
    }

    {  // rotation: Riemannian gradient step with polar retraction
      const Mat23 g = rotation_gradient(pr, s, x.cam);
      if (g.squaredNorm() > 0.0) {
        const Points3 sc = s.colwise() - s * pr.d / dsum;
        Eigen::SelfAdjointEigenSolver<Mat3> es(sc * pr.d.asDiagonal() * sc.transpose(),
                                              Eigen::EigenvaluesOnly);
        const double lip = x.cam.s * x.cam.s * std::max(es.eigenvalues().maxCoeff(), 1e-300);
        double t = 1.0 / lip;
        for (int ls = 0; ls < cfg.max_line_search; ++ls, t *= cfg.line_search_shrink) {
          WeakPose cand = x;
          cand.cam.rbar = polar_rows(x.cam.rbar - t * g);
          const double c_new = weak_objective(pr, s, cand.cam, cand.c, cfg.lambda);
          if (c_new < cost) {
            accept(it, Block::Rotation, cand, s);
            break;
          }
        }
      }
    }

    if (cost == 0.0 || (prev - cost) <= cfg.rel_tol * prev) {
      sol.flags.converged = true;
      break;
    }
  }
  sol.iterations = std::min(it, cfg.max_iters);
  if (sol.flags.condition_number > ill_threshold) sol.flags.ill_conditioned = true;
  sol.pose = x;
  sol.cost = cost;
  return sol;
}

namespace {

FullPose lift_weak(const WeakPose& weak, const Problem& pr, const CameraIntrinsics& k,
                   const SolverConfig& cfg) {
  FullPose fp;
  fp.c = weak.c;
  fp.pose.rotation = lift_rotation(weak.cam.rbar);
  const double tz = k.fx / weak.cam.s;
  fp.pose.translation = Vec3((weak.cam.tbar.x() - k.cx) * tz / k.fx,
                             (weak.cam.tbar.y() - k.cy) * tz / k.fy, tz);
  const Points3 cam = fp.pose.apply(pr.shape(fp.c));
  if (cam.cols() > 0) {
    const double zmin = cam.row(2).minCoeff();
    if (zmin < cfg.z_min) fp.pose.translation.z() += cfg.z_min - zmin;
  }
  return fp;
}

double full_objective(const Problem& pr, const Points3& wn, const Points3& s,
                      const FullPose& x, double lambda) {
  const Points3 r = wn * x.z.asDiagonal() - x.pose.apply(s);
  return weighted_half_sq(r, pr.d) + 0.5 * lambda * x.c.squaredNorm();
}

Eigen::VectorXd foot_depths(const Points3& wn, const Points3& q, double z_min, bool& clamped) {
  Eigen::VectorXd z(wn.cols());
  clamped = false;
  for (Eigen::Index i = 0; i < wn.cols(); ++i) {
    z(i) = wn.col(i).dot(q.col(i)) / wn.col(i).squaredNorm();
    if (!(z(i) >= z_min)) {
      z(i) = z_min;
      clamped = true;
    }
  }
  return z;
}

}  // namespace

FullPose full_pose_from_weak(const WeakPose& weak, const KeypointObservations& obs,
                             const CameraIntrinsics& k, const ShapeBasis& basis,
                             const SolverConfig& cfg) {
  k.validate();
  const Problem pr = compress(obs, basis);
  FullPose fp = lift_weak(weak, pr, k, cfg);
  bool clamped = false;
  fp.z = foot_depths(normalize_pixels(obs.w, k), fp.pose.apply(instantiate(basis, fp.c)),
                     cfg.z_min, clamped);
  return fp;
}

FullSolution solve_full(const KeypointObservations& obs, const CameraIntrinsics& k,
                        const ShapeBasis& basis, const SolverConfig& cfg,
                        const WeakPose& init) {
  cfg.validate();
  k.validate();
  const Problem pr = compress(obs, basis);
  if (pr.p() < 4) {
    throw Error(ErrorCode::TooFewKeypoints, "full-perspective solve needs at least 4 weighted keypoints");
  }
  const int nk = pr.k();
  const double ill_threshold = cfg.coplanarity_tol > 0.0 ? 1.0 / cfg.coplanarity_tol
                                                         : std::numeric_limits<double>::infinity();
  const Points3 wn = normalize_pixels(pr.w, k);
  const double dsum = pr.d.sum();

  FullSolution sol;
  sol.flags.condition_number = scatter_condition(pr.b0, pr.d);
  FullPose x = lift_weak(init, pr, k, cfg);
  if (x.c.size() != nk) x.c = ShapeCoefficients::Zero(nk);
  Points3 s = pr.shape(x.c);
  bool clamped = false;
  x.z = foot_depths(wn, x.pose.apply(s), cfg.z_min, clamped);

  double cost = full_objective(pr, wn, s, x, cfg.lambda);
  if (!std::isfinite(cost)) {
    throw SolveFailure<FullPose>("initial full-perspective cost is not finite", x);
  }
  sol.trace.push_back({0, Block::Init, cost});

  auto accept = [&](int it, Block block, const FullPose& cand, const Points3& cand_s) {
    const double c_new = full_objective(pr, wn, cand_s, cand, cfg.lambda);
    if (!std::isfinite(c_new)) {
      throw SolveFailure<FullPose>("full-perspective cost became non-finite", x);
    }
    if (c_new <= cost) {
      x = cand;
      s = cand_s;
      cost = c_new;
      sol.trace.push_back({it, block, cost});
    }
  };

  int clamped_sweeps = 0;
  int it = 1;
  for (; it <= cfg.max_iters; ++it) {
    const double prev = cost;

    {  // depths: foot of the perpendicular on each viewing ray
      FullPose cand = x;
      cand.z = foot_depths(wn, x.pose.apply(s), cfg.z_min, clamped);
      if (clamped) ++clamped_sweeps;
      accept(it, Block::Depth, cand, s);
    }

    const Points3 q = wn * x.z.asDiagonal();
    const Vec3 qbar = weighted_mean(q, pr.d);
    const Vec3 sbar = weighted_mean(s, pr.d);
    try {  // rotation: weighted Procrustes on centred point sets
      FullPose cand = x;
      cand.pose.rotation = orthogonal_procrustes(s.colwise() - sbar, q.colwise() - qbar, pr.d);
      cand.pose.translation = qbar - cand.pose.rotation * sbar;
      accept(it, Block::Rotation, cand, s);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateConfiguration) throw;
      sol.flags.ill_conditioned = true;
    }

    {  // translation
      FullPose cand = x;
      cand.pose.translation = (q - x.pose.rotation.matrix() * s) * pr.d / dsum;
      accept(it, Block::Translation, cand, s);
    }

    {  // depths and translation jointly: z eliminated through the ray projectors
      Mat3 a = Mat3::Zero();
      Vec3 b = Vec3::Zero();
      const Points3 rs = x.pose.rotation.matrix() * s;
      for (Eigen::Index i = 0; i < pr.p(); ++i) {
        const Vec3 ray = wn.col(i);
        const Mat3 perp = Mat3::Identity() - ray * ray.transpose() / ray.squaredNorm();
        a += pr.d(i) * perp;
        b += pr.d(i) * perp * rs.col(i);
      }
      FullPose cand = x;
      cand.pose.translation = -a.ldlt().solve(b);
      if (cand.pose.translation.allFinite()) {
        cand.z = foot_depths(wn, cand.pose.apply(s), cfg.z_min, clamped);
        accept(it, Block::Translation, cand, s);
      }
    }

    if (nk > 0) {  // shape
      const Mat3& r = x.pose.rotation.matrix();
      const Points3 res = (q - r * pr.b0).colwise() - x.pose.translation;
      Eigen::MatrixXd a(3 * pr.p(), nk);
      for (int j = 0; j < nk; ++j) {
        const Points3 pm = r * pr.modes[static_cast<std::size_t>(j)];
        a.col(j) = Eigen::Map<const Eigen::VectorXd>(pm.data(), 3 * pr.p());
      }
      Eigen::VectorXd wts(3 * pr.p());
      for (Eigen::Index i = 0; i < pr.p(); ++i) wts.segment<3>(3 * i).setConstant(pr.d(i));
      const Eigen::MatrixXd n = a.transpose() * wts.asDiagonal() * a +
                                cfg.lambda * Eigen::MatrixXd::Identity(nk, nk);
      const Eigen::VectorXd rhs =
          a.transpose() * wts.asDiagonal() * Eigen::Map<const Eigen::VectorXd>(res.data(), 3 * pr.p());
      double cond = 1.0;
      FullPose cand = x;
      cand.c = solve_normal_equations(n, rhs, cond);
      if (cond > ill_threshold) sol.flags.ill_conditioned = true;
      accept(it, Block::Shape, cand, pr.shape(cand.c));
    }

    if (cost == 0.0 || (prev - cost) <= cfg.rel_tol * prev) {
      sol.flags.converged = true;
      break;
    }
  }
  sol.iterations = std::min(it, cfg.max_iters);
  sol.flags.behind_camera = 2 * clamped_sweeps > sol.iterations;
  if (sol.flags.condition_number > ill_threshold) sol.flags.ill_conditioned = true;

  // report depths for every keypoint, weighted or not
  sol.pose = x;
  sol.pose.z = foot_depths(normalize_pixels(obs.w, k), x.pose.apply(instantiate(basis, x.c)),
                           cfg.z_min, clamped);
  for (std::size_t j = 0; j < pr.index.size(); ++j) sol.pose.z(pr.index[j]) = x.z(static_cast<Eigen::Index>(j));
  sol.cost = cost;
  return sol;
}

KeypointObservations observations_from_heatmaps(const HeatmapStack& stack,
                                                const EstimateOptions& opts) {
  KeypointObservations obs;
  const auto n = static_cast<Eigen::Index>(stack.channels.size());
  obs.w.resize(2, n);
  obs.d.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Heatmap& hm = stack.channels[static_cast<std::size_t>(i)];
    const Peak pk = extract_peak(hm, opts.subpixel_peaks);
    obs.w(0, i) = stack.mapping.to_image_u(pk.u);
    obs.w(1, i) = stack.mapping.to_image_v(pk.v);
    obs.d(i) = pk.confidence;
    obs.names.push_back(hm.keypoint_name);
  }
  return obs;
}

PoseEstimate estimate_pose(const ObservationSource& source, const ShapeBasis& basis,
                           const std::optional<CameraIntrinsics>& k,
                           const EstimateOptions& opts) {
  PoseEstimate est;
  if (const auto* stack = std::get_if<HeatmapStack>(&source)) {
    est.observations = observations_from_heatmaps(*stack, opts);
  } else {
    est.observations = std::get<KeypointObservations>(source);
  }
  if (opts.confidence_transform) {
    for (Eigen::Index i = 0; i < est.observations.d.size(); ++i) {
      est.observations.d(i) = opts.confidence_transform(est.observations.d(i));
    }
  }
  est.observations.validate();
  if (est.observations.count_above(opts.min_confidence) < 4) {
    throw Error(ErrorCode::TooFewKeypoints, "fewer than 4 keypoints above the confidence floor");
  }

  const ShapeBasis work = opts.whiten_modes ? whitened(basis) : basis;
  const Eigen::VectorXd unit_scale =
      opts.whiten_modes
          ? Eigen::Map<const Eigen::VectorXd>(basis.eigenvalues.data(),
                                              static_cast<Eigen::Index>(basis.eigenvalues.size()))
                .cwiseSqrt()
                .eval()
          : Eigen::VectorXd::Ones(basis.num_modes()).eval();

  est.weak = solve_weak(est.observations, work, opts.solver);
  if (k) {
    // the full cost is in meters at the object's depth; s converts to pixels
    SolverConfig full_cfg = opts.solver;
    full_cfg.lambda = opts.solver.lambda / (est.weak.pose.cam.s * est.weak.pose.cam.s);
    est.full = solve_full(est.observations, *k, work, full_cfg, est.weak.pose);
    est.full->pose.c = est.full->pose.c.cwiseProduct(unit_scale);
  }
  est.weak.pose.c = est.weak.pose.c.cwiseProduct(unit_scale);

  const auto& obs = est.observations;
  const Points2 wproj = project_weak(instantiate(basis, est.weak.pose.c), est.weak.pose.cam);
  est.weak_residuals_px = (obs.w - wproj).colwise().norm().transpose();
  if (est.full) {
    const Points3 cam = est.full->pose.pose.apply(instantiate(basis, est.full->pose.c));
    est.full_residuals_px.resize(obs.size());
    for (Eigen::Index i = 0; i < obs.size(); ++i) {
      if (cam(2, i) > 0.0) {
        const Vec2 px(k->fx * cam(0, i) / cam(2, i) + k->cx, k->fy * cam(1, i) / cam(2, i) + k->cy);
        est.full_residuals_px(i) = (obs.w.col(i) - px).norm();
      } else {
        est.full_residuals_px(i) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return est;
}

}  // namespace kpose
