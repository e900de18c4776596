#include "kpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kpose {

namespace {

bool is_identity(const RigidTransform& t) {
  return (t.rotation.matrix() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12 &&
         t.translation.cwiseAbs().maxCoeff() <= 1e-12;
}

void check_inputs(const ModelPoints& model, const SymmetrySet& sym) {
  model.validate();
  sym.validate();
}

void check_depths(const Points3& cam, const char* which) {
  for (Eigen::Index i = 0; i < cam.cols(); ++i) {
    if (!(cam(2, i) > 0.0)) {
      throw Error(ErrorCode::BehindCamera,
                  std::string(which) + " pose puts vertex " + std::to_string(i) + " behind the camera");
    }
  }
}

}  // namespace

SymmetrySet SymmetrySet::from(std::vector<RigidTransform> transforms) {
  SymmetrySet s;
  s.transforms = std::move(transforms);
  if (std::none_of(s.transforms.begin(), s.transforms.end(), is_identity)) {
    s.transforms.insert(s.transforms.begin(), RigidTransform::identity());
  }
  return s;
}

void SymmetrySet::validate() const {
  if (std::none_of(transforms.begin(), transforms.end(), is_identity)) {
    throw Error(ErrorCode::InvalidArgument, "symmetry set must contain identity");
  }
  for (const auto& t : transforms) {
    if (!is_rotation(t.rotation.matrix(), 1e-6) || !t.translation.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "symmetry is not a rigid transform");
    }
  }
}

ModelPoints ModelPoints::subsampled(const Points3& vertices, Eigen::Index max_points) {
  ModelPoints m;
  if (vertices.cols() <= max_points) {
    m.points = vertices;
    return m;
  }
  const Eigen::Index stride = (vertices.cols() + max_points - 1) / max_points;
  const Eigen::Index n = (vertices.cols() + stride - 1) / stride;
  m.points.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) m.points.col(i) = vertices.col(i * stride);
  return m;
}

void ModelPoints::validate() const {
  if (points.cols() < 1) throw Error(ErrorCode::InvalidArgument, "model needs at least one vertex");
  if (!points.allFinite()) throw Error(ErrorCode::InvalidArgument, "model vertices must be finite");
}

double rotation_geodesic(const Rotation& r1, const Rotation& r2) {
  return so3_log(r1.transpose() * r2).norm();
}

double translation_error(const Vec3& t1, const Vec3& t2) { return (t1 - t2).norm(); }

double mssd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym) {
  check_inputs(model, sym);
  const Points3 pe = est.apply(model.points);
  const Eigen::Index n = pe.cols();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : sym.transforms) {
    const RigidTransform g = gt * s;
    const Mat3 r = g.rotation.matrix();
    const Vec3 t = g.translation;
    double worst = 0.0;
#pragma omp parallel for reduction(max : worst) schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 pg = r * model.points.col(i) + t;
      worst = std::max(worst, (pe.col(i) - pg).norm());
    }
    best = std::min(best, worst);
  }
  return best;
}

double mspd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym, const CameraIntrinsics& k) {
  check_inputs(model, sym);
  const Points3 ce = est.apply(model.points);
  check_depths(ce, "estimate");
  const Points2 pe = project_full(model.points, est, k);
  const Eigen::Index n = pe.cols();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : sym.transforms) {
    const RigidTransform g = gt * s;
    const Points3 cg = g.apply(model.points);
    check_depths(cg, "ground truth");
    double worst = 0.0;
#pragma omp parallel for reduction(max : worst) schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = k.fx * cg(0, i) / cg(2, i) + k.cx;
      const double v = k.fy * cg(1, i) / cg(2, i) + k.cy;
      worst = std::max(worst, std::hypot(pe(0, i) - u, pe(1, i) - v));
    }
    best = std::min(best, worst);
  }
  return best;
}

namespace serial {

double mssd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym) {
  check_inputs(model, sym);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : sym.transforms) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < model.points.cols(); ++i) {
      const Vec3 x = model.points.col(i);
      worst = std::max(worst, (est.apply(x) - gt.apply(s.apply(x))).norm());
    }
    best = std::min(best, worst);
  }
  return best;
}

double mspd(const RigidTransform& est, const RigidTransform& gt, const ModelPoints& model,
            const SymmetrySet& sym, const CameraIntrinsics& k) {
  check_inputs(model, sym);
  check_depths(est.apply(model.points), "estimate");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : sym.transforms) {
    check_depths((gt * s).apply(model.points), "ground truth");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < model.points.cols(); ++i) {
      const Points3 x = model.points.col(i);
      const Points2 a = project_full(x, est, k);
      const Points2 b = project_full(s.apply(x), gt, k);
      worst = std::max(worst, (a - b).norm());
    }
    best = std::min(best, worst);
  }
  return best;
}

}  // namespace serial

double recall_at_thresholds(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty() || thresholds.empty()) {
    throw Error(ErrorCode::InvalidArgument, "recall needs errors and thresholds");
  }
  double sum = 0.0;
  for (double th : thresholds) {
    const auto hits = std::count_if(errors.begin(), errors.end(), [th](double e) { return e <= th; });
    sum += static_cast<double>(hits) / static_cast<double>(errors.size());
  }
  return sum / static_cast<double>(thresholds.size());
}

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace kpose
