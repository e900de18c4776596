#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace kpose {

using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Heatmap {
  Grid grid;  // rows = height, cols = width
  std::string keypoint_name;

  int width() const { return static_cast<int>(grid.cols()); }
  int height() const { return static_cast<int>(grid.rows()); }
};

/// Heatmap pixel -> full-image pixel: full = scale * hm + offset.
struct CropMapping {
  double scale = 1.0;
  double offset_u = 0.0;
  double offset_v = 0.0;

  double to_image_u(double u) const { return scale * u + offset_u; }
  double to_image_v(double v) const { return scale * v + offset_v; }
  double to_heatmap_u(double u) const { return (u - offset_u) / scale; }
  double to_heatmap_v(double v) const { return (v - offset_v) / scale; }
};

struct HeatmapStack {
  std::vector<Heatmap> channels;
  CropMapping mapping;
};

/// amplitude * exp(-((x-u)^2 + (y-v)^2) / (2 sigma^2)) at integer pixel centres.
Heatmap synth_heatmap(double u, double v, int height, int width,
                      double sigma = 1.0, double amplitude = 1.0,
                      std::string name = {});

/// Mapping of a grid downsampled by an integer factor, pixel centres aligned:
/// heatmap pixel x covers image pixels [scale x, scale x + scale).
CropMapping downsample_mapping(int scale);

/// One channel per column of pixels (image coordinates) on the downsampled
/// grid; columns with zero or non-finite amplitude or position give all-zero
/// channels.
HeatmapStack synth_heatmap_stack(const Eigen::Matrix2Xd& pixels, const Eigen::VectorXd& amplitudes,
                                 const std::vector<std::string>& names, int image_width,
                                 int image_height, int scale, double sigma = 1.0);

struct Peak {
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;
};

/// Row-major first argmax; confidence is the peak value. With refine_subpixel
/// a separable quadratic fit through the 3x3 neighbourhood shifts (u, v) by
/// at most half a pixel; confidence stays the raw peak.
Peak extract_peak(const Heatmap& hm, bool refine_subpixel = false);

}  // namespace kpose
