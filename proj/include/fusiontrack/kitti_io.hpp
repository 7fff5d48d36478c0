#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fusiontrack {

/// Raised for malformed input files. `line()` is 1-based, 0 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

/// One KITTI tracking record: a ground-truth label, a detection (track_id -1)
/// or a tracker result (track_id >= 0, score set).
struct LabeledBox {
  int frame = 0;
  int track_id = -1;
  std::string class_name;
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  BBox bbox;
  Eigen::Vector3d dims = Eigen::Vector3d::Zero();      // h, w, l
  Eigen::Vector3d location = Eigen::Vector3d::Zero();  // camera frame
  double rotation_y = 0.0;
  std::optional<double> score;
};

using FrameBoxes = std::map<int, std::vector<LabeledBox>>;

struct CalibrationSet {
  Eigen::Matrix<double, 3, 4> P = Eigen::Matrix<double, 3, 4>::Zero();
  Eigen::Matrix4d velo_to_cam = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d rect = Eigen::Matrix4d::Identity();

  bool valid() const;
};

struct RawPointCloud {
  // n x 4: x, y, z, reflectance in the sensor frame
  Eigen::MatrixXd points;

  Eigen::Index size() const { return points.rows(); }
};

enum class CloudFormat { binary_f32, text };

LabeledBox parse_label_line(std::string_view line, std::size_t line_number = 0);
FrameBoxes parse_sequence_labels(std::istream& source);

CalibrationSet parse_calib(std::istream& source);

RawPointCloud load_point_cloud(std::span<const std::byte> data, CloudFormat format);
RawPointCloud load_point_cloud_file(const std::string& path);

/// Serializes a point cloud as little-endian float32 quads.
std::vector<std::byte> encode_point_cloud(const RawPointCloud& cloud);

std::string format_label_line(const LabeledBox& box);

/// Writes boxes in submission format. Every box needs track_id >= 0 and a score.
void write_results(const FrameBoxes& tracks, std::ostream& sink);

/// Same layout as write_results but without the score/track requirements.
void write_labels(const FrameBoxes& boxes, std::ostream& sink);

}  // namespace fusiontrack
