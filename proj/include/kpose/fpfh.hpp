#pragma once

#include <span>
#include <vector>

#include "kpose/geometry.hpp"

namespace kpose {

constexpr int kFpfhBins = 11;
constexpr int kFpfhSize = 3 * kFpfhBins;

using FpfhDescriptor = Eigen::Matrix<double, kFpfhSize, 1>;

struct FpfhDescriptors {
  Eigen::Matrix<double, kFpfhSize, Eigen::Dynamic> values;  // one column per query
  std::vector<bool> isolated;                             // no neighbour within radius
};

/// Angular pair features (theta, alpha, phi) of two oriented points in the
/// Darboux frame of the point whose normal is closer to the connecting line.
/// Returns false for coincident points or a degenerate frame.
bool pair_features(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2,
                   double& theta, double& alpha, double& phi);

/// Fast point feature histograms: 11 bins each for theta, alpha and phi of
/// the simplified histograms, accumulated over radius neighbours with weight
/// 1 / distance, each 11-bin block L1-normalized. Isolated points get zeros.
FpfhDescriptors fpfh(const Points3& points, const Points3& normals, double radius);

/// Descriptors for a subset of points; neighbourhoods still use the whole cloud.
FpfhDescriptors fpfh_at(const Points3& points, const Points3& normals, double radius,
                        std::span<const Eigen::Index> queries);

/// Descriptors of external oriented points against a fixed neighbour cloud.
/// Queries never act as neighbours, so every descriptor depends only on its
/// own point and the cloud.
FpfhDescriptors fpfh_query(const Points3& points, const Points3& normals, double radius,
                           const Points3& query_points, const Points3& query_normals);

namespace serial {
/// Brute-force neighbour search, single-threaded.
FpfhDescriptors fpfh(const Points3& points, const Points3& normals, double radius);
}  // namespace serial

}  // namespace kpose
