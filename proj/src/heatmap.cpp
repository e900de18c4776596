#include "kpose/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "kpose/error.hpp"

namespace kpose {

Heatmap synth_heatmap(double u, double v, int height, int width, double sigma,
                      double amplitude, std::string name) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (height < 1 || width < 1) throw Error(ErrorCode::InvalidArgument, "heatmap must be nonempty");
  Heatmap hm;
  hm.keypoint_name = std::move(name);
  hm.grid.resize(height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    const double dy2 = (y - v) * (y - v);
    for (int x = 0; x < width; ++x) {
      const double dx2 = (x - u) * (x - u);
      hm.grid(y, x) = amplitude * std::exp(-(dx2 + dy2) * inv);
    }
  }
  return hm;
}

CropMapping downsample_mapping(int scale) {
  if (scale < 1) throw Error(ErrorCode::InvalidArgument, "downsampling factor must be at least 1");
  return {static_cast<double>(scale), (scale - 1) / 2.0, (scale - 1) / 2.0};
}

HeatmapStack synth_heatmap_stack(const Eigen::Matrix2Xd& pixels, const Eigen::VectorXd& amplitudes,
                                 const std::vector<std::string>& names, int image_width,
                                 int image_height, int scale, double sigma) {
  if (amplitudes.size() != pixels.cols() || (!names.empty() && names.size() != static_cast<std::size_t>(pixels.cols()))) {
    throw Error(ErrorCode::DimensionMismatch, "one amplitude and name per keypoint required");
  }
  HeatmapStack stack;
  stack.mapping = downsample_mapping(scale);
  const int w = (image_width + scale - 1) / scale;
  const int h = (image_height + scale - 1) / scale;
  for (Eigen::Index i = 0; i < pixels.cols(); ++i) {
    std::string name = names.empty() ? std::string() : names[static_cast<std::size_t>(i)];
    if (amplitudes(i) > 0.0 && pixels.col(i).allFinite()) {
      stack.channels.push_back(synth_heatmap(stack.mapping.to_heatmap_u(pixels(0, i)),
                                             stack.mapping.to_heatmap_v(pixels(1, i)), h, w, sigma,
                                             amplitudes(i), std::move(name)));
    } else {
      stack.channels.push_back({Grid::Zero(h, w), std::move(name)});
    }
  }
  return stack;
}

namespace {

// vertex offset of the parabola through (-1, a), (0, b), (1, c)
double parabola_offset(double a, double b, double c) {
  const double denom = a - 2.0 * b + c;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

}  // namespace

Peak extract_peak(const Heatmap& hm, bool refine_subpixel) {
  if (hm.grid.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty heatmap");
  Eigen::Index best = 0;
  const double* d = hm.grid.data();
  for (Eigen::Index i = 1; i < hm.grid.size(); ++i) {
    if (d[i] > d[best]) best = i;
  }
  const auto row = static_cast<int>(best / hm.grid.cols());
  const auto col = static_cast<int>(best % hm.grid.cols());
  Peak p{static_cast<double>(col), static_cast<double>(row), d[best]};
  if (refine_subpixel) {
    if (col > 0 && col + 1 < hm.width()) {
      p.u += parabola_offset(hm.grid(row, col - 1), hm.grid(row, col), hm.grid(row, col + 1));
    }
    if (row > 0 && row + 1 < hm.height()) {
      p.v += parabola_offset(hm.grid(row - 1, col), hm.grid(row, col), hm.grid(row + 1, col));
    }
  }
  return p;
}

}  // namespace kpose
