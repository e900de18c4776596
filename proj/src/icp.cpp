#include "kpose/icp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <vector>

#include "kpose/spatial_grid.hpp"

namespace kpose {

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct Evaluation {
  double error = 0.0;
  int correspondences = 0;
};

Evaluation evaluate(const Points3& src, const PointCloud& tgt, const PointGrid& grid,
                    const RigidTransform& t, double corr_dist) {
  const Points3 moved = t.apply(src);
  const auto n = moved.cols();
  const double cap = corr_dist * corr_dist;
  std::vector<double> contrib(static_cast<std::size_t>(n), cap);
  std::vector<char> matched(static_cast<std::size_t>(n), 0);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 p = moved.col(i);
    if (auto hit = grid.nearest(p, corr_dist)) {
      const double r = tgt.normals.col(hit->index).dot(p - tgt.points.col(hit->index));
      contrib[static_cast<std::size_t>(i)] = std::min(r * r, cap);
      matched[static_cast<std::size_t>(i)] = 1;
    }
  }
  Evaluation e;
  for (std::size_t i = 0; i < contrib.size(); ++i) {
    e.error += contrib[i];
    e.correspondences += matched[i];
  }
  e.error /= static_cast<double>(std::max<Eigen::Index>(n, 1));
  return e;
}

}  // namespace

double point_to_plane_error(const Points3& src, const PointCloud& tgt, const RigidTransform& t,
                            double corr_dist) {
  const PointGrid grid(tgt.points, corr_dist);
  return evaluate(src, tgt, grid, t, corr_dist).error;
}

IcpResult icp_point_to_plane(const Points3& src, const PointCloud& tgt, const RigidTransform& init,
                             const IcpConfig& cfg) {
  if (src.cols() == 0 || tgt.size() == 0) {
    throw Error(ErrorCode::InvalidArgument, "ICP needs nonempty source and target clouds");
  }
  if (!tgt.has_normals()) throw Error(ErrorCode::InvalidArgument, "ICP target needs normals");

  const PointGrid grid(tgt.points, cfg.corr_dist);
  IcpResult res;
  res.transform = init;
  Evaluation cur = evaluate(src, tgt, grid, init, cfg.corr_dist);
  if (cur.correspondences < 6) {
    throw Error(ErrorCode::InsufficientOverlap, "fewer than 6 ICP correspondences");
  }
  res.initial_error = cur.error;

  const auto n = src.cols();
  std::vector<Vec6> jac(static_cast<std::size_t>(n));
  std::vector<double> resid(static_cast<std::size_t>(n));
  std::vector<char> used(static_cast<std::size_t>(n));

  for (int it = 1; it <= cfg.max_iters; ++it) {
    res.iterations = it;
    const Points3 moved = res.transform.apply(src);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 p = moved.col(i);
      const auto k = static_cast<std::size_t>(i);
      used[k] = 0;
      if (auto hit = grid.nearest(p, cfg.corr_dist)) {
        const Vec3 nrm = tgt.normals.col(hit->index);
        if (nrm.squaredNorm() == 0.0) continue;
        jac[k] << p.cross(nrm), nrm;
        resid[k] = nrm.dot(p - tgt.points.col(hit->index));
        used[k] = 1;
      }
    }
    Mat6 a = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    int count = 0;
    for (std::size_t k = 0; k < used.size(); ++k) {
      if (!used[k]) continue;
      a.noalias() += jac[k] * jac[k].transpose();
      b += jac[k] * resid[k];
      ++count;
    }
    if (count < 6) throw Error(ErrorCode::InsufficientOverlap, "fewer than 6 ICP correspondences");

    Eigen::SelfAdjointEigenSolver<Mat6> es(a);
    const auto& ev = es.eigenvalues();
    const double lmax = ev.maxCoeff();
    if (!(lmax > 0.0)) break;
    Vec6 delta = Vec6::Zero();
    const Vec6 proj = es.eigenvectors().transpose() * b;
    for (int j = 0; j < 6; ++j) {
      if (ev(j) > cfg.degeneracy_ratio * lmax) {
        delta -= es.eigenvectors().col(j) * (proj(j) / ev(j));
      } else {
        res.degenerate = true;
      }
    }

    bool accepted = false;
    double scale = 1.0;
    RigidTransform next;
    Evaluation next_eval;
    for (int h = 0; h <= cfg.max_step_halvings; ++h, scale *= 0.5) {
      const Vec6 step = scale * delta;
      const RigidTransform inc{so3_exp(step.head<3>()), step.tail<3>()};
      next = inc * res.transform;
      next_eval = evaluate(src, tgt, grid, next, cfg.corr_dist);
      if (next_eval.error <= cur.error) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double decrease = cur.error - next_eval.error;
    res.transform = next;
    cur = next_eval;
    if (decrease <= cfg.rel_tol * std::max(cur.error + decrease, 1e-300)) {
      res.converged = true;
      break;
    }
  }
  res.final_error = cur.error;
  res.correspondences = cur.correspondences;
  return res;
}

}  // namespace kpose
