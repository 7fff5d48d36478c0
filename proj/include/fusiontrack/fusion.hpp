#pragma once

#include "fusiontrack/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fusiontrack::fusion {

using nn::Index;
using nn::Matrix;
using nn::ParamStore;
using nn::Vector;

/// Projected LiDAR points on the resized patch plane with their features.
struct PointSet {
  Matrix positions;  // n x 2 (u'', v'')
  Matrix features;   // n x D
  int level = 0;

  Index size() const { return positions.rows(); }
};

/// Pixel centers of a resized patch at one pyramid level.
struct PixelGrid {
  Matrix positions;  // m x 2, inside [0, width] x [0, height]
  Matrix features;   // m x D
  int level = 0;
  double width = 0.0;
  double height = 0.0;

  Index size() const { return positions.rows(); }
};

/// K slots ordered by distance; masked-out slots hold index -1.
struct NeighborGroup {
  Index center_index = -1;
  std::vector<Index> neighbor_indices;
  std::vector<bool> mask;
  int k = 0;
  double radius = 0.0;

  int count() const;
  bool empty() const { return count() == 0; }
};

/// The k nearest candidates within `radius` (inclusive). Ties go to the lower index.
NeighborGroup group_neighbors(const Eigen::Vector2d& center, const Matrix& candidates, int k,
                              double radius);

/// Uniform-grid bucket index over 2D candidates for radius-bounded KNN.
class NeighborGrid {
 public:
  NeighborGrid(const Matrix& candidates, double cell_size);

  NeighborGroup query(const Eigen::Vector2d& center, int k, double radius) const;

 private:
  Matrix candidates_;
  double cell_ = 1.0;
  double origin_x_ = 0.0;
  double origin_y_ = 0.0;
  Index nx_ = 1;
  Index ny_ = 1;
  std::vector<Index> cell_start_;  // CSR layout over cells
  std::vector<Index> cell_items_;

  Index cell_coord(double v, double origin, Index n) const;
};

/// One group per row of `centers`; grid-accelerated and OpenMP-parallel over centers.
std::vector<NeighborGroup> group_all(const Matrix& centers, const Matrix& candidates, int k,
                                     double radius);

inline constexpr Index kPositionWidth = 7;

/// [x, y, x - y, |x - y|] for center x and neighbor y.
Eigen::Matrix<double, 1, kPositionWidth> encode_position(const Eigen::Vector2d& center,
                                                         const Eigen::Vector2d& neighbor);

/// Parameters for one interaction direction at one level.
struct DirectionParams {
  nn::Mlp center_weight;    // first-stage weights of the center modality
  nn::Mlp neighbor_weight;  // first-stage weights of the grouped modality
  nn::DenseLayer position_fc;
  nn::Mlp attention;        // second-stage MLP over [g, FC(u)]
};

struct LevelParams {
  DirectionParams points_centered;
  DirectionParams pixels_centered;
};

struct GateParams {
  nn::Mlp camera;
  nn::Mlp lidar;
};

DirectionParams add_direction_params(ParamStore& store, const std::string& name, Index channels,
                                     std::uint64_t seed);
GateParams add_gate_params(ParamStore& store, const std::string& name, Index width,
                           std::uint64_t seed);

/// (w_a * a + w_b * b) / (w_a + w_b) with w = sigmoid(MLP(.)), row-wise.
struct GatedBlendTape {
  Matrix a, b;
  Matrix w_a, w_b;
  Matrix blended;
  nn::MlpTape tape_a, tape_b;
  std::vector<bool> mask;
};

struct BlendGrad {
  Matrix a;
  Matrix b;
};

/// First attentive stage. Rows are neighbor slots; masked rows come out zero.
/// An empty mask means every row is retained.
Matrix fuse_first_stage(const ParamStore& store, const DirectionParams& params,
                        const Matrix& f_center, const Matrix& f_neighbor,
                        const std::vector<bool>& mask = {}, GatedBlendTape* tape = nullptr);
BlendGrad fuse_first_stage_backward(ParamStore& grads, const DirectionParams& params,
                                    const GatedBlendTape& tape, const Matrix& grad_fused);

struct SecondStageTape {
  Matrix g;
  Matrix u;
  Matrix v;
  Matrix weights;  // softmax weights, rows x D
  std::vector<Index> offsets;
  std::vector<bool> mask;
  nn::MlpTape attention_tape;
};

/// Second attentive stage over consecutive row segments [offsets[c], offsets[c+1]).
/// Softmax runs across each segment's rows, per channel. Returns one row per segment.
Matrix fuse_second_stage(const ParamStore& store, const DirectionParams& params, const Matrix& g,
                         const Matrix& u, const std::vector<Index>& offsets,
                         const std::vector<bool>& mask = {}, SecondStageTape* tape = nullptr);
Matrix fuse_second_stage_backward(ParamStore& grads, const DirectionParams& params,
                                  const SecondStageTape& tape, const Matrix& grad_out);

/// Single-group convenience: K x D rows with a K-entry mask, returns the fused D-vector.
Vector fuse_second_stage(const ParamStore& store, const DirectionParams& params, const Matrix& g,
                         const Matrix& u, const std::vector<bool>& mask);

struct InteractionTape {
  std::vector<NeighborGroup> groups;
  std::vector<Index> active;         // centers with a non-empty group
  std::vector<Index> row_neighbor;   // neighbor index of each packed row
  Index centers = 0;
  Index neighbors = 0;
  GatedBlendTape first;
  SecondStageTape second;
};

struct InteractionGrad {
  Matrix centers;
  Matrix neighbors;
};

/// Replaces each center's features with the attentive fusion of its
/// neighbors; centers without neighbors keep their features.
Matrix interact(const ParamStore& store, const DirectionParams& params, const Matrix& center_pos,
                const Matrix& center_feat, const Matrix& neighbor_pos, const Matrix& neighbor_feat,
                int k, double radius, InteractionTape* tape = nullptr);
InteractionGrad interact_backward(ParamStore& grads, const DirectionParams& params,
                                  const InteractionTape& tape, const Matrix& grad_out);

PointSet points_centered_update(const ParamStore& store, const DirectionParams& params,
                                const PointSet& points, const PixelGrid& pixels, int k,
                                double radius, InteractionTape* tape = nullptr);
PixelGrid pixels_centered_update(const ParamStore& store, const DirectionParams& params,
                                 const PixelGrid& pixels, const PointSet& points, int k,
                                 double radius, InteractionTape* tape = nullptr);

struct AttentionRecord {
  Index center = 0;
  Index neighbor = 0;
  double weight = 0.0;  // channel mean of the second-stage softmax weight
};

std::vector<AttentionRecord> attention_weights(const InteractionTape& tape);

/// Gated fusion of camera and LiDAR descriptors; rows are detections.
Matrix final_fuse(const ParamStore& store, const GateParams& gate, const Matrix& camera,
                  const Matrix& lidar, GatedBlendTape* tape = nullptr);
BlendGrad final_fuse_backward(ParamStore& grads, const GateParams& gate,
                              const GatedBlendTape& tape, const Matrix& grad_fused);

/// Serial, unbatched implementations kept as the reference the parallel kernels
/// are tested against.
namespace reference {

std::vector<NeighborGroup> group_all(const Matrix& centers, const Matrix& candidates, int k,
                                     double radius);

Matrix interact(const ParamStore& store, const DirectionParams& params, const Matrix& center_pos,
                const Matrix& center_feat, const Matrix& neighbor_pos, const Matrix& neighbor_feat,
                int k, double radius);

PointSet points_centered_update(const ParamStore& store, const DirectionParams& params,
                                const PointSet& points, const PixelGrid& pixels, int k,
                                double radius);
PixelGrid pixels_centered_update(const ParamStore& store, const DirectionParams& params,
                                 const PixelGrid& pixels, const PointSet& points, int k,
                                 double radius);

}  // namespace reference

}  // namespace fusiontrack::fusion
