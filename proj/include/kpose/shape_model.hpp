#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kpose/geometry.hpp"

namespace kpose {

/// Named 3D keypoints, optionally with unit surface normals.
struct Keypoints3D {
  Points3 points;
  std::vector<std::string> names;
  std::optional<Points3> normals;

  Eigen::Index size() const { return points.cols(); }
  void validate() const;
};

/// Linear shape model S = b0 + sum_i c_i * modes[i].
///
/// Modes are orthonormal under the vectorized inner product, eigenvalues are
/// the sample variances along them, sorted descending. k = 0 is a rigid model.
struct ShapeBasis {
  std::vector<std::string> names;
  Points3 b0;
  std::vector<Points3> modes;
  std::vector<double> eigenvalues;

  Eigen::Index num_points() const { return b0.cols(); }
  int num_modes() const { return static_cast<int>(modes.size()); }
  void validate() const;

  /// Rigid model from a single keypoint set (k = 0, c fixed at zero).
  static ShapeBasis rigid(const Keypoints3D& kps);
};

using ShapeCoefficients = Eigen::VectorXd;

/// Either an explicit mode count or a variance fraction to exceed.
struct PcaSelection {
  std::optional<int> k;
  double variance_target = 0.95;
};

/// Smallest k with cumulative(eigenvalues[0..k)) / total > threshold.
/// All-zero spectra give 0; a threshold never exceeded gives all of them.
int select_components(std::span<const double> eigenvalues, double threshold);

/// Mean-centred PCA over vectorized, pre-aligned keypoint sets.
///
/// Throws DimensionMismatch when instances disagree in point count or names
/// do not match, InvalidArgument for fewer than two instances or a requested
/// k that the instance count cannot support (k > instances - 1).
ShapeBasis build_pca_basis(std::span<const Points3> instances,
                           std::vector<std::string> names,
                           const PcaSelection& selection = {});

/// Full spectrum of the training set, before selection (for reporting).
std::vector<double> pca_spectrum(std::span<const Points3> instances);

Points3 instantiate(const ShapeBasis& basis, const ShapeCoefficients& c);

/// Coefficients of x's deviation from b0 in the (orthonormal) modes.
ShapeCoefficients project_onto_modes(const ShapeBasis& basis, const Points3& x);

/// Modes scaled by sqrt(eigenvalue); coefficients of the result are in units
/// of standard deviations.
ShapeBasis whitened(const ShapeBasis& basis);

}  // namespace kpose
