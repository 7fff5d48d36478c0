#pragma once

#include "fusiontrack/image.hpp"
#include "fusiontrack/kitti_io.hpp"

#include <string>
#include <vector>

namespace fusiontrack {

/// One sequence in memory. Frame f has images[f] and clouds[f].
struct SequenceData {
  std::string name;
  CalibrationSet calib;
  FrameBoxes gt;          // may be empty when no labels exist
  FrameBoxes detections;  // track_id -1, score set
  std::vector<Image> images;
  std::vector<RawPointCloud> clouds;

  int frames() const { return static_cast<int>(images.size()); }
};

/// Directory layout (KITTI tracking style):
///   calib/<seq>.txt, label_02/<seq>.txt (optional), det_02/<seq>.txt,
///   image_02/<seq>/<frame:06>.ppm, velodyne/<seq>/<frame:06>.bin
std::vector<std::string> list_sequences(const std::string& root);
SequenceData load_sequence(const std::string& root, const std::string& name);
std::vector<SequenceData> load_dataset(const std::string& root, const std::vector<std::string>& names = {});

void write_sequence(const std::string& root, const SequenceData& seq);

/// Reads a label file, or every <seq>.txt in a directory keyed by stem.
std::map<std::string, FrameBoxes> load_label_tree(const std::string& path);

}  // namespace fusiontrack
