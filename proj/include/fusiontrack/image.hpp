#pragma once

#include "fusiontrack/geometry.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace fusiontrack {

/// Interleaved channels, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool empty() const { return data.empty(); }
};

/// Binary (P6) or ASCII (P3) PPM, 8-bit.
Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);

/// Bilinear sample at continuous pixel coordinates where pixel (i, j) covers
/// [i, i+1) x [j, j+1); clamps at the border.
double sample_bilinear(const Image& image, double x, double y, int channel);

/// Crops the box described by M and resizes it to cols x rows samples taken at
/// the centers of a cols x rows grid over the patch frame. Row y*cols + x.
Eigen::MatrixXd crop_resize(const Image& image, const MMatrix& M, int cols, int rows);

}  // namespace fusiontrack
