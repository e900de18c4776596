#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "kpose/geometry.hpp"

namespace kpose {

/// Uniform voxel hash over a fixed point set for radius and bounded
/// nearest-neighbour queries. Queries are const and thread-safe; the point
/// matrix must outlive the grid.
class PointGrid {
 public:
  PointGrid(const Points3& points, double cell_size);

  /// Calls f(index, squared_distance) for every point within radius of q.
  template <typename F>
  void for_each_in_radius(const Vec3& q, double radius, F&& f) const {
    const double r2 = radius * radius;
    const auto lo = cell_of(q.array() - radius);
    const auto hi = cell_of(q.array() + radius);
    for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y) {
        for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
          auto it = cells_.find(key(x, y, z));
          if (it == cells_.end()) continue;
          for (std::uint32_t j = it->second.first; j < it->second.second; ++j) {
            const Eigen::Index i = order_[j];
            const double d2 = (points_->col(i) - q).squaredNorm();
            if (d2 <= r2) f(i, d2);
          }
        }
      }
    }
  }

  /// Neighbours of q within radius, ascending index order.
  std::vector<Eigen::Index> radius_search(const Vec3& q, double radius) const;

  struct Hit {
    Eigen::Index index;
    double distance;
  };
  /// Closest point within max_distance (ties to the lower index).
  std::optional<Hit> nearest(const Vec3& q, double max_distance) const;

 private:
  std::array<std::int64_t, 3> cell_of(const Eigen::Array3d& p) const;
  static std::int64_t key(std::int64_t x, std::int64_t y, std::int64_t z);

  const Points3* points_;
  double inv_cell_;
  std::vector<Eigen::Index> order_;
  std::unordered_map<std::int64_t, std::pair<std::uint32_t, std::uint32_t>> cells_;
};

}  // namespace kpose
