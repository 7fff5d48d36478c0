#pragma once

#include "fusiontrack/kitti_io.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fusiontrack {

/// Points projected onto an image plane. Rows of `uv` line up with `depth`
/// and `source_index`, which indexes the originating RawPointCloud.
struct ProjectedPoints {
  Eigen::MatrixXd uv;  // n x 2
  Eigen::VectorXd depth;
  std::vector<Eigen::Index> source_index;

  Eigen::Index size() const { return uv.rows(); }
};

/// Homogeneous map from full-image pixels into the frame of a bbox crop that
/// has been resized to width x height. `m` is the composed matrix; apply_m
/// evaluates the same map in factored form (translate, divide by the box
/// extent, scale) so that box corners land exactly on 0 and width/height.
/// A default-constructed MMatrix (width 0) is a plain matrix.
struct MMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  BBox source;
  double width = 0.0;
  double height = 0.0;
  bool inverse = false;  // patch frame -> image
};

ProjectedPoints project_to_image(const RawPointCloud& cloud, const CalibrationSet& calib);

/// Keeps points with x1 <= u <= x2 and y1 <= v <= y2.
ProjectedPoints frustum_filter(const ProjectedPoints& proj, const BBox& bbox);

/// Throws std::invalid_argument for a degenerate bbox or non-positive target size.
MMatrix compute_m_matrix(const BBox& bbox, double width, double height);

/// Direct per-axis form of the crop-and-resize map; used to cross-check the matrix.
Eigen::Vector2d rescale_to_patch(const BBox& bbox, double width, double height,
                                 const Eigen::Vector2d& uv);

Eigen::Vector2d apply_m(const MMatrix& M, const Eigen::Vector2d& uv);
MMatrix invert_m(const MMatrix& M);

/// Applies M to every projected point, preserving depth and source indices.
ProjectedPoints calibrate(const ProjectedPoints& proj, const MMatrix& M);

}  // namespace fusiontrack
