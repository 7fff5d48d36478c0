#pragma once

#include "fusiontrack/dataset.hpp"

#include <cstdint>
#include <vector>

namespace fusiontrack {

/// Toy KITTI-like scenes. Every object has the same physical size and a
/// (color, reflectance) pair unique within its sequence, drawn from three
/// colors and three reflectances, so neither modality alone tells all
/// objects apart.
struct SynthConfig {
  int sequences = 20;
  int frames = 20;
  int objects = 5;
  std::uint64_t seed = 0;
  int image_width = 256;
  int image_height = 96;
  double focal = 200.0;
  double miss_rate = 0.05;        // per object and frame
  double false_positive_rate = 0.1;  // expected false detections per true object
  double jitter = 1.0;            // pixels, uniform
  int points_per_object = 48;
  int background_points = 150;
};

std::vector<SequenceData> generate_synthetic(const SynthConfig& config);

/// The camera used by generate_synthetic.
CalibrationSet synthetic_calibration(const SynthConfig& config);

}  // namespace fusiontrack
