#include "kpose/spatial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kpose {

PointGrid::PointGrid(const Points3& points, double cell_size)
    : points_(&points), inv_cell_(1.0 / cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "grid cell size must be positive");
  const auto n = points.cols();
  std::vector<std::int64_t> keys(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = cell_of(points.col(i).array());
    keys[static_cast<std::size_t>(i)] = key(c[0], c[1], c[2]);
  }
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  std::stable_sort(order_.begin(), order_.end(), [&](Eigen::Index a, Eigen::Index b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  std::size_t j = 0;
  while (j < order_.size()) {
    const std::int64_t k = keys[static_cast<std::size_t>(order_[j])];
    std::size_t e = j;
    while (e < order_.size() && keys[static_cast<std::size_t>(order_[e])] == k) ++e;
    cells_.emplace(k, std::make_pair(static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(e)));
    j = e;
  }
}

std::array<std::int64_t, 3> PointGrid::cell_of(const Eigen::Array3d& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] * inv_cell_)),
          static_cast<std::int64_t>(std::floor(p[1] * inv_cell_)),
          static_cast<std::int64_t>(std::floor(p[2] * inv_cell_))};
}

std::int64_t PointGrid::key(std::int64_t x, std::int64_t y, std::int64_t z) {
  // 21 bits per axis; scenes span far fewer cells than 2^20 in any direction
  constexpr std::int64_t mask = (1 << 21) - 1;
  return ((x & mask) << 42) | ((y & mask) << 21) | (z & mask);
}

std::vector<Eigen::Index> PointGrid::radius_search(const Vec3& q, double radius) const {
  std::vector<Eigen::Index> out;
  for_each_in_radius(q, radius, [&](Eigen::Index i, double) { out.push_back(i); });
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<PointGrid::Hit> PointGrid::nearest(const Vec3& q, double max_distance) const {
  std::optional<Hit> best;
  double best_d2 = max_distance * max_distance;
  for_each_in_radius(q, max_distance, [&](Eigen::Index i, double d2) {
    if (!best || d2 < best_d2 || (d2 == best_d2 && i < best->index)) {
      best = Hit{i, d2};
      best_d2 = d2;
    }
  });
  if (best) best->distance = std::sqrt(best->distance);
  return best;
}

}  // namespace kpose
