#include "kpose/shape_model.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <set>

namespace kpose {

void Keypoints3D::validate() const {
  if (static_cast<Eigen::Index>(names.size()) != points.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "one name per keypoint required");
  }
  if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
    throw Error(ErrorCode::InvalidArgument, "keypoint names must be unique");
  }
  if (!points.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite keypoint");
  if (normals) {
    if (normals->cols() != points.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "one normal per keypoint required");
    }
    for (Eigen::Index i = 0; i < normals->cols(); ++i) {
      if (std::abs(normals->col(i).norm() - 1.0) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, "keypoint normal " + names[i] + " is not unit length");
      }
    }
  }
}

void ShapeBasis::validate() const {
  if (static_cast<Eigen::Index>(names.size()) != b0.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "basis names do not match b0 columns");
  }
  if (modes.size() != eigenvalues.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one eigenvalue per mode required");
  }
  for (const auto& m : modes) {
    if (m.cols() != b0.cols()) throw Error(ErrorCode::DimensionMismatch, "mode size differs from b0");
  }
  for (double e : eigenvalues) {
    if (!(e >= 0.0)) throw Error(ErrorCode::InvalidArgument, "eigenvalues must be nonnegative");
  }
}

ShapeBasis ShapeBasis::rigid(const Keypoints3D& kps) {
  ShapeBasis b;
  b.names = kps.names;
  b.b0 = kps.points;
  b.validate();
  return b;
}

int select_components(std::span<const double> eigenvalues, double threshold) {
  double total = 0.0;
  for (double e : eigenvalues) total += e;
  if (!(total > 0.0)) return 0;
  double cum = 0.0;
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    cum += eigenvalues[k];
    if (cum / total > threshold) return static_cast<int>(k + 1);
  }
  return static_cast<int>(eigenvalues.size());
}

namespace {

// rows: instances, columns: x0 y0 z0 x1 y1 z1 ...
Eigen::MatrixXd stack_instances(std::span<const Points3> instances) {
  const Eigen::Index p = instances.front().cols();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(instances.size()), 3 * p);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].cols() != p) {
      throw Error(ErrorCode::DimensionMismatch, "instances differ in keypoint count");
    }
    data.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(instances[i].data(), 3 * p);
  }
  return data;
}

struct Spectrum {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd directions;  // columns
  std::vector<double> eigenvalues;
};

Spectrum spectrum(std::span<const Points3> instances) {
  if (instances.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "PCA needs at least two instances");
  }
  const Eigen::MatrixXd data = stack_instances(instances);
  Spectrum out;
  out.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - out.mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const double n_minus_1 = static_cast<double>(data.rows() - 1);
  // rounding noise in the centred data is ~1e-16 relative per entry
  const double floor = 1e-24 * (1.0 + out.mean.squaredNorm());
  const auto& sv = svd.singularValues();
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    double e = sv(i) * sv(i) / n_minus_1;
    out.eigenvalues.push_back(e > floor ? e : 0.0);
  }
  out.directions = svd.matrixV();
  return out;
}

}  // namespace

std::vector<double> pca_spectrum(std::span<const Points3> instances) {
  return spectrum(instances).eigenvalues;
}

ShapeBasis build_pca_basis(std::span<const Points3> instances,
                           std::vector<std::string> names,
                           const PcaSelection& selection) {
  Spectrum sp = spectrum(instances);
  const Eigen::Index p = instances.front().cols();
  if (static_cast<Eigen::Index>(names.size()) != p) {
    throw Error(ErrorCode::DimensionMismatch, "one name per keypoint required");
  }

  int k = 0;
  if (selection.k) {
    k = *selection.k;
    if (k < 0) throw Error(ErrorCode::InvalidArgument, "k must be nonnegative");
    if (k > static_cast<int>(instances.size()) - 1 || k > 3 * p) {
      throw Error(ErrorCode::InvalidArgument,
                  "fewer instances than needed for the requested k");
    }
  } else {
    k = select_components(sp.eigenvalues, selection.variance_target);
    int nonzero = 0;
    for (double e : sp.eigenvalues) nonzero += e > 0.0 ? 1 : 0;
    k = std::min(k, nonzero);
  }

  ShapeBasis basis;
  basis.names = std::move(names);
  basis.b0 = Eigen::Map<const Points3>(sp.mean.data(), 3, p);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd dir = sp.directions.col(i);
    Eigen::Index imax = 0;
    dir.cwiseAbs().maxCoeff(&imax);
    if (dir(imax) < 0.0) dir = -dir;
    basis.modes.emplace_back(Eigen::Map<const Points3>(dir.data(), 3, p));
    basis.eigenvalues.push_back(sp.eigenvalues[static_cast<std::size_t>(i)]);
  }
  return basis;
}

Points3 instantiate(const ShapeBasis& basis, const ShapeCoefficients& c) {
  if (c.size() != basis.num_modes()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient count differs from mode count");
  }
  Points3 s = basis.b0;
  for (int i = 0; i < basis.num_modes(); ++i) s += c(i) * basis.modes[static_cast<std::size_t>(i)];
  return s;
}

ShapeCoefficients project_onto_modes(const ShapeBasis& basis, const Points3& x) {
  if (x.cols() != basis.num_points()) {
    throw Error(ErrorCode::DimensionMismatch, "shape size differs from basis");
  }
  ShapeCoefficients c(basis.num_modes());
  const Points3 dev = x - basis.b0;
  for (int i = 0; i < basis.num_modes(); ++i) {
    c(i) = basis.modes[static_cast<std::size_t>(i)].cwiseProduct(dev).sum();
  }
  return c;
}

ShapeBasis whitened(const ShapeBasis& basis) {
  ShapeBasis out = basis;
  for (std::size_t i = 0; i < out.modes.size(); ++i) {
    out.modes[i] *= std::sqrt(out.eigenvalues[i]);
  }
  return out;
}

}  // namespace kpose
