#pragma once

#include "fusiontrack/association.hpp"
#include "fusiontrack/fusion.hpp"
#include "fusiontrack/geometry.hpp"
#include "fusiontrack/image.hpp"
#include "fusiontrack/nn.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace fusiontrack {

using nn::Index;
using nn::Matrix;
using nn::Vector;

inline constexpr int kLevels = 4;

enum class Modality { image, lidar, fused };

Modality parse_modality(const std::string& text);
std::string to_string(Modality m);

struct ModelConfig {
  std::array<Index, kLevels> channels{16, 32, 64, 64};
  int in_channels = 3;
  double patch_size = 32.0;  // side of the resized patch frame
  int grid = 8;              // level-0 pixel grid side; halves each level
  int max_points = 32;       // level-0 point budget; halves each level
  int k_points = 8;          // pixels gathered per point
  double r_points = 16.0;
  int k_pixels = 4;          // points gathered per pixel
  double r_pixels = 8.0;
  std::array<bool, kLevels> interact{true, true, true, true};
  Modality modality = Modality::fused;

  Index width() const { return channels[kLevels - 1]; }
  int grid_at(int level) const { return std::max(1, grid >> level); }
  int points_at(int level) const { return std::max(1, max_points >> level); }
  /// Throws std::invalid_argument when a constraint is violated.
  void validate() const;
};

struct ImageBranch {
  std::array<nn::Mlp, kLevels> level;
  std::array<nn::DenseLayer, kLevels> skip;
};

struct PointBranch {
  std::array<nn::Mlp, kLevels> level;
};

/// All parameters live in one store under the prefixes img., pc., fuse., gate.
/// and head.; every tensor exists regardless of modality.
struct Model {
  ModelConfig config;
  nn::ParamStore store;
  ImageBranch image;
  PointBranch points;
  std::array<fusion::LevelParams, kLevels> fuse;
  fusion::GateParams gate;
  association::EstimatorHeads heads;
};

Model make_model(const ModelConfig& config, std::uint64_t seed);

/// Everything extraction needs for one detection, computed once from sensor data.
struct DetectionInput {
  Matrix patch;       // grid^2 x 9*in_channels, 3x3 neighborhood per level-0 cell
  Matrix point_raw;   // n x 4: xyz minus centroid, reflectance
  Matrix point_uv;    // n x 2 in the patch frame
  std::array<std::vector<Index>, kLevels> keep;  // level l rows taken from level l-1 (level 0: from raw)

  Index points() const { return point_raw.rows(); }
};

/// Deterministic farthest-point sampling starting at row 0.
std::vector<Index> farthest_point_sample(const Matrix& xyz, Index count);

/// Pixel-center positions of a grid over a square patch frame.
Matrix grid_positions(int side, double patch_size);

/// Points are taken from `projected` (already in image coordinates) inside the box.
DetectionInput prepare_detection(const ModelConfig& config, const Image& image,
                                 const RawPointCloud& cloud, const ProjectedPoints& projected,
                                 const BBox& box);

struct DetectionFeatures {
  Vector camera;  // skip-pooled image descriptor
  Vector lidar;   // max-pooled point descriptor
  Vector fused;
  bool lidar_empty = false;
};

struct LevelTape {
  Matrix pix_in;
  nn::MlpTape img_mlp;
  Matrix pix_feat;  // after the level MLP
  Matrix pix_out;   // after interaction
  Matrix pts_in;
  nn::MlpTape pc_mlp;
  Matrix pts_feat;
  Matrix pts_out;
  bool interacted = false;
  fusion::InteractionTape pixels_tape;  // pixels gather points
  fusion::InteractionTape points_tape;  // points gather pixels
  Vector pooled;                        // mean of pix_out
};

struct ExtractionTape {
  std::array<LevelTape, kLevels> levels;
  std::vector<Index> argmax;  // per lidar channel, row of the final point set
  std::array<std::vector<Index>, kLevels> keep;
  bool has_image = false;
  bool has_points = false;
  fusion::GatedBlendTape final_tape;
  bool fused = false;
};

/// Runs both branches with the configured interaction schedule. The branches the
/// model's modality does not use are skipped.
DetectionFeatures extract(const Model& model, const DetectionInput& input,
                          ExtractionTape* tape = nullptr);

/// Accumulates parameter gradients given gradients of the three descriptors
/// (any of which may be empty).
void extract_backward(nn::ParamStore& grads, const Model& model, const ExtractionTape& tape,
                      const Vector& d_camera, const Vector& d_lidar, const Vector& d_fused);

/// The descriptor association runs on for the model's modality.
const Vector& descriptor(const DetectionFeatures& f, Modality m);

struct AttentionRow {
  int level = 0;
  std::string direction;  // "pixels" (pixel gathers points) or "points"
  Index center = 0;
  Index neighbor = 0;
  double weight = 0.0;
};

std::vector<AttentionRow> attention_rows(const ExtractionTape& tape);

nn::Checkpoint model_checkpoint(const Model& model);
/// Restores every tensor and checks the stored configuration against the model.
void load_model(Model& model, const nn::Checkpoint& ckpt);
/// Configuration recorded in a checkpoint's metadata.
ModelConfig config_from_checkpoint(const nn::Checkpoint& ckpt);
void write_config_meta(const ModelConfig& config, std::map<std::string, std::string>& meta);

}  // namespace fusiontrack
