#include "kpose/fpfh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kpose/spatial_grid.hpp"

namespace kpose {

bool pair_features(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2,
                   double& theta, double& alpha, double& phi) {
  Vec3 dp = p2 - p1;
  const double dist = dp.norm();
  if (dist == 0.0) return false;
  dp /= dist;
  const double a1 = n1.dot(dp);
  const double a2 = n2.dot(dp);
  Vec3 u = n1;
  Vec3 nt = n2;
  phi = a1;
  if (std::acos(std::clamp(std::abs(a1), 0.0, 1.0)) > std::acos(std::clamp(std::abs(a2), 0.0, 1.0))) {
    u = n2;
    nt = n1;
    dp = -dp;
    phi = -a2;
  }
  Vec3 v = dp.cross(u);
  const double vn = v.norm();
  if (vn == 0.0) return false;
  v /= vn;
  const Vec3 w = u.cross(v);
  alpha = v.dot(nt);
  theta = std::atan2(w.dot(nt), u.dot(nt));
  return true;
}

namespace {

int bin_of(double x, double lo, double hi) {
  const int b = static_cast<int>(std::floor(kFpfhBins * (x - lo) / (hi - lo)));
  return std::clamp(b, 0, kFpfhBins - 1);
}

// Simplified histogram of p against its neighbours (raw counts per block).
FpfhDescriptor spfh(const Points3& pts, const Points3& nrm, Eigen::Index p,
                    const std::vector<Eigen::Index>& neighbours) {
  FpfhDescriptor h = FpfhDescriptor::Zero();
  for (Eigen::Index q : neighbours) {
    if (q == p) continue;
    double theta = 0.0, alpha = 0.0, phi = 0.0;
    if (!pair_features(pts.col(p), nrm.col(p), pts.col(q), nrm.col(q), theta, alpha, phi)) continue;
    h(bin_of(theta, -std::numbers::pi, std::numbers::pi)) += 1.0;
    h(kFpfhBins + bin_of(alpha, -1.0, 1.0)) += 1.0;
    h(2 * kFpfhBins + bin_of(phi, -1.0, 1.0)) += 1.0;
  }
  return h;
}

void normalize_blocks(FpfhDescriptor& d) {
  for (int b = 0; b < 3; ++b) {
    auto block = d.segment<kFpfhBins>(b * kFpfhBins);
    const double s = block.sum();
    if (s > 0.0) block /= s;
  }
}

FpfhDescriptor combine(const Points3& pts, Eigen::Index p, const std::vector<Eigen::Index>& neighbours,
                       const std::vector<FpfhDescriptor>& spfh_of, const std::vector<int>& slot,
                       bool& isolated) {
  FpfhDescriptor own = spfh_of[static_cast<std::size_t>(slot[static_cast<std::size_t>(p)])];
  normalize_blocks(own);
  FpfhDescriptor acc = FpfhDescriptor::Zero();
  int k = 0;
  for (Eigen::Index q : neighbours) {
    if (q == p) continue;
    const double dist = (pts.col(q) - pts.col(p)).norm();
    if (dist == 0.0) continue;
    FpfhDescriptor other = spfh_of[static_cast<std::size_t>(slot[static_cast<std::size_t>(q)])];
    normalize_blocks(other);
    acc += other / dist;
    ++k;
  }
  isolated = k == 0;
  if (isolated) return FpfhDescriptor::Zero();
  FpfhDescriptor out = own + acc / k;
  normalize_blocks(out);
  return out;
}

void check(const Points3& points, const Points3& normals, double radius) {
  if (normals.cols() != points.cols()) throw Error(ErrorCode::DimensionMismatch, "one normal per point required");
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "FPFH radius must be positive");
}

}  // namespace

FpfhDescriptors fpfh_at(const Points3& points, const Points3& normals, double radius,
                        std::span<const Eigen::Index> queries) {
  check(points, normals, radius);
  const PointGrid grid(points, radius);
  const auto nq = static_cast<Eigen::Index>(queries.size());

  std::vector<std::vector<Eigen::Index>> query_nbrs(queries.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index j = 0; j < nq; ++j) {
    query_nbrs[static_cast<std::size_t>(j)] = grid.radius_search(points.col(queries[static_cast<std::size_t>(j)]), radius);
  }

  // points whose simplified histogram is needed: queries and their neighbours
  std::vector<int> slot(static_cast<std::size_t>(points.cols()), -1);
  std::vector<Eigen::Index> needed;
  auto require = [&](Eigen::Index i) {
    if (slot[static_cast<std::size_t>(i)] < 0) {
      slot[static_cast<std::size_t>(i)] = static_cast<int>(needed.size());
      needed.push_back(i);
    }
  };
  for (std::size_t j = 0; j < queries.size(); ++j) {
    require(queries[j]);
    for (Eigen::Index q : query_nbrs[j]) require(q);
  }

  std::vector<FpfhDescriptor> spfh_of(needed.size());
  const auto nn = static_cast<Eigen::Index>(needed.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index j = 0; j < nn; ++j) {
    const Eigen::Index p = needed[static_cast<std::size_t>(j)];
    spfh_of[static_cast<std::size_t>(j)] = spfh(points, normals, p, grid.radius_search(points.col(p), radius));
  }

  FpfhDescriptors out;
  out.values.resize(kFpfhSize, nq);
  std::vector<char> isolated(queries.size(), 0);
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index j = 0; j < nq; ++j) {
    bool iso = false;
    out.values.col(j) = combine(points, queries[static_cast<std::size_t>(j)], query_nbrs[static_cast<std::size_t>(j)],
                                spfh_of, slot, iso);
    isolated[static_cast<std::size_t>(j)] = iso ? 1 : 0;
  }
  out.isolated.assign(isolated.begin(), isolated.end());
  return out;
}

FpfhDescriptors fpfh(const Points3& points, const Points3& normals, double radius) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(points.cols()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return fpfh_at(points, normals, radius, all);
}

FpfhDescriptors fpfh_query(const Points3& points, const Points3& normals, double radius,
                           const Points3& query_points, const Points3& query_normals) {
  check(points, normals, radius);
  if (query_normals.cols() != query_points.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one normal per query point required");
  }
  // Append the queries after the cloud; neighbour lists only index the cloud part.
  const Eigen::Index m = points.cols();
  const Eigen::Index nq = query_points.cols();
  Points3 all(3, m + nq), all_n(3, m + nq);
  all << points, query_points;
  all_n << normals, query_normals;
  const PointGrid grid(points, radius);

  std::vector<std::vector<Eigen::Index>> query_nbrs(static_cast<std::size_t>(nq));
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index j = 0; j < nq; ++j) {
    query_nbrs[static_cast<std::size_t>(j)] = grid.radius_search(query_points.col(j), radius);
  }
  std::vector<int> slot(static_cast<std::size_t>(m + nq), -1);
  std::vector<Eigen::Index> needed;
  for (Eigen::Index j = 0; j < nq; ++j) {
    slot[static_cast<std::size_t>(m + j)] = static_cast<int>(needed.size());
    needed.push_back(m + j);
    for (Eigen::Index q : query_nbrs[static_cast<std::size_t>(j)]) {
      if (slot[static_cast<std::size_t>(q)] < 0) {
        slot[static_cast<std::size_t>(q)] = static_cast<int>(needed.size());
        needed.push_back(q);
      }
    }
  }

  std::vector<FpfhDescriptor> spfh_of(needed.size());
  const auto nn = static_cast<Eigen::Index>(needed.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (Eigen::Index j = 0; j < nn; ++j) {
    const Eigen::Index p = needed[static_cast<std::size_t>(j)];
    const std::vector<Eigen::Index> nb =
        p >= m ? query_nbrs[static_cast<std::size_t>(p - m)] : grid.radius_search(points.col(p), radius);
    spfh_of[static_cast<std::size_t>(j)] = spfh(all, all_n, p, nb);
  }

  FpfhDescriptors out;
  out.values.resize(kFpfhSize, nq);
  std::vector<char> isolated(static_cast<std::size_t>(nq), 0);
#pragma omp parallel for schedule(dynamic, 16)
  for (Eigen::Index j = 0; j < nq; ++j) {
    bool iso = false;
    out.values.col(j) = combine(all, m + j, query_nbrs[static_cast<std::size_t>(j)], spfh_of, slot, iso);
    isolated[static_cast<std::size_t>(j)] = iso ? 1 : 0;
  }
  out.isolated.assign(isolated.begin(), isolated.end());
  return out;
}

namespace serial {

FpfhDescriptors fpfh(const Points3& points, const Points3& normals, double radius) {
  check(points, normals, radius);
  const auto n = points.cols();
  std::vector<std::vector<Eigen::Index>> nbrs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((points.col(i) - points.col(j)).squaredNorm() <= radius * radius) nbrs[static_cast<std::size_t>(i)].push_back(j);
    }
  }
  std::vector<FpfhDescriptor> spfh_of;
  std::vector<int> slot(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    slot[static_cast<std::size_t>(i)] = static_cast<int>(i);
    spfh_of.push_back(spfh(points, normals, i, nbrs[static_cast<std::size_t>(i)]));
  }
  FpfhDescriptors out;
  out.values.resize(kFpfhSize, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool iso = false;
    out.values.col(i) = combine(points, i, nbrs[static_cast<std::size_t>(i)], spfh_of, slot, iso);
    out.isolated.push_back(iso);
  }
  return out;
}

}  // namespace serial

}  // namespace kpose
