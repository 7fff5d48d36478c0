#pragma once

#include "fusiontrack/model.hpp"
#include "fusiontrack/tracker.hpp"

#include <cstdint>
#include <vector>

namespace fusiontrack {

struct TrainConfig {
  int epochs = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean sequence loss seen during each epoch
};

/// Association losses on one sequence: balanced BCE on affinities between
/// consecutive frames' true detections, BCE on the new/end heads from
/// ground-truth continuity, BCE on confidence against "matches ground truth".
/// With `accumulate`, parameter gradients are added to the model's store.
double sequence_loss(Model& model, const PreparedSequence& seq, bool accumulate);

/// Mean sequence_loss over a dataset, no gradients.
double dataset_loss(Model& model, const std::vector<PreparedSequence>& data);

/// One Adam step per sequence, sequences visited in a seeded order each epoch.
TrainLog train(Model& model, const std::vector<PreparedSequence>& data, const TrainConfig& config);

/// Trains a model that sees only one modality; returns its full checkpoint.
nn::Checkpoint pretrain_single_modality(const ModelConfig& config, const std::vector<PreparedSequence>& data,
                                        Modality modality, const TrainConfig& train_config,
                                        TrainLog* log = nullptr);

/// Initializes the image branch from `image_ckpt` and the point branch from
/// `lidar_ckpt`, everything else fresh, then trains the fused model.
nn::Checkpoint fine_tune_fusion(const ModelConfig& config, const nn::Checkpoint& image_ckpt,
                                const nn::Checkpoint& lidar_ckpt, const std::vector<PreparedSequence>& data,
                                const TrainConfig& train_config, TrainLog* log = nullptr);

}  // namespace fusiontrack
