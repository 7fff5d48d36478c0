#pragma once

#include "fusiontrack/association.hpp"
#include "fusiontrack/dataset.hpp"
#include "fusiontrack/model.hpp"

#include <string>
#include <vector>

namespace fusiontrack {

struct FrameInput {
  int frame = 0;
  std::vector<LabeledBox> detections;
  std::vector<DetectionInput> inputs;
};

/// Sensor data reduced to per-detection extraction inputs. `gt_ids[f][j]` is
/// the ground-truth ID detection j of frame f overlaps (IoU >= 0.5), or -1.
struct PreparedSequence {
  std::string name;
  std::vector<FrameInput> frames;
  FrameBoxes gt;
  std::vector<std::vector<int>> gt_ids;
};

/// Depends only on the geometric parts of the model configuration.
PreparedSequence prepare_sequence(const SequenceData& seq, const ModelConfig& config);

struct TrackerConfig {
  double conf_threshold = 0.5;
  double end_threshold = 0.5;
  int max_age = 2;
};

/// Features for every detection of a frame; OpenMP-parallel across detections.
std::vector<DetectionFeatures> extract_frame_features(const Model& model, const FrameInput& frame);

/// Per frame: extract, score against active tracklets, solve, apply birth/death.
/// When `log` is given, every assignment decision is appended to it.
FrameBoxes track_sequence(const Model& model, const PreparedSequence& seq, const TrackerConfig& config,
                          std::string* log = nullptr);

}  // namespace fusiontrack
