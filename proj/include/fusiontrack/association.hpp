#pragma once

#include "fusiontrack/kitti_io.hpp"
#include "fusiontrack/nn.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fusiontrack::association {

using nn::Index;
using nn::Matrix;
using nn::ParamStore;
using nn::Vector;

/// Raw scores between M tracklets and N detections.
struct AdjacencyScores {
  Matrix affinity;    // M x N, unbounded
  Vector new_score;   // N, in (0, 1)
  Vector end_score;   // M, in (0, 1)
  Vector confidence;  // N, in (0, 1)
};

struct Assignment {
  std::vector<std::pair<Index, Index>> links;  // (tracklet, detection)
  std::vector<Index> births;
  std::vector<Index> deaths;
  std::vector<Index> discarded;

  bool operator==(const Assignment&) const = default;
};

/// Binary program: maximize  sum s_ij y_ij + sum logit(new_j) y_j + sum logit(end_i) y_i
/// with one unit of flow through every retained detection and every tracklet.
struct FlowProblem {
  Matrix affinity;                // M x R over retained detections
  Vector new_logit;               // R
  Vector end_logit;               // M
  std::vector<Index> detection;   // retained column -> original detection index
  std::vector<Index> discarded;   // original indices dropped by confidence gating
  Index total_detections = 0;

  Index tracklets() const { return affinity.rows(); }
  Index retained() const { return affinity.cols(); }
  Index variables() const { return tracklets() * retained() + tracklets() + retained(); }
  Index constraints() const { return tracklets() + retained(); }
};

FlowProblem build_flow_problem(const AdjacencyScores& scores, double conf_threshold);

/// Builds a problem directly from link scores and birth/end log-odds with no gating.
FlowProblem make_flow_problem(Matrix affinity, Vector new_logit, Vector end_logit);

double objective(const FlowProblem& problem, const Assignment& assignment);

/// Exact optimum via a square assignment over tracklets + virtual-new rows and
/// detections + virtual-end columns. Among optimal solutions, tracklet 0 takes
/// its lowest-indexed admissible detection (with "end" ranked last), then
/// tracklet 1, and so on.
Assignment solve_assignment(const FlowProblem& problem);

/// Exhaustive enumeration with the same tie rule. Throws when M or N exceeds 6.
Assignment brute_force_assignment(const FlowProblem& problem);

/// Equality-form linear relaxation: maximize c'y s.t. A y = b, y >= 0.
/// Variable order: y_ij row-major, then new_j, then end_i.
struct LinearRelaxation {
  Matrix A;
  Vector b;
  Vector c;
};

LinearRelaxation linear_relaxation(const FlowProblem& problem);
Assignment assignment_from_solution(const FlowProblem& problem, const Vector& y);

/// One line per decision.
std::string format_assignment(const Assignment& assignment, int frame);

// ---- estimator heads ----

struct EstimatorHeads {
  nn::Mlp affinity;    // [f_i, f_j, |f_i - f_j|] -> 1
  nn::Mlp new_head;    // f -> 1
  nn::Mlp end_head;    // f -> 1
  nn::Mlp confidence;  // f -> 1
};

EstimatorHeads add_estimator_heads(ParamStore& store, const std::string& name, Index width,
                                   std::uint64_t seed);

struct AffinityTape {
  Index prev_rows = 0;
  Index cur_rows = 0;
  Matrix pairs;
  nn::MlpTape mlp;
};

struct AffinityGrad {
  Matrix prev;
  Matrix cur;
};

/// s_ij for every (tracklet, detection) pair, M x N.
Matrix estimate_affinity(const ParamStore& store, const nn::Mlp& head, const Matrix& prev,
                         const Matrix& cur, AffinityTape* tape = nullptr);
AffinityGrad estimate_affinity_backward(ParamStore& grads, const nn::Mlp& head,
                                        const AffinityTape& tape, const Matrix& grad_scores);

struct StartEnd {
  Vector new_score;
  Vector end_score;
};

StartEnd estimate_start_end(const ParamStore& store, const EstimatorHeads& heads,
                            const Matrix& feats);
Vector estimate_confidence(const ParamStore& store, const EstimatorHeads& heads,
                           const Matrix& feats);

/// Pre-sigmoid output of a scalar head, one entry per row.
Vector head_logits(const ParamStore& store, const nn::Mlp& head, const Matrix& feats,
                   nn::MlpTape* tape = nullptr);
Matrix head_backward(ParamStore& grads, const nn::Mlp& head, const nn::MlpTape& tape,
                     const Vector& grad_logits);

// ---- tracklets ----

enum class TrackState { active, ended };

struct Tracklet {
  int id = 0;
  std::vector<LabeledBox> boxes;
  Vector last_feature;
  TrackState state = TrackState::active;
  int last_frame = -1;
  int misses = 0;
};

class TrackletStore {
 public:
  /// Indices of active tracklets in creation order; row i of the affinity matrix.
  std::vector<std::size_t> active() const;
  Matrix active_features(Index width) const;

  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  int next_id() const { return next_id_; }

  Tracklet& at(std::size_t index) { return tracklets_.at(index); }
  /// Creates an active tracklet with the next unused ID.
  Tracklet& spawn();

 private:
  std::vector<Tracklet> tracklets_;
  int next_id_ = 0;
};

/// Applies an assignment made against `store.active()`. Linked detections keep
/// their tracklet's ID, births take fresh IDs, unmatched tracklets end when
/// their end score reaches `end_threshold` or they have missed more than
/// `max_age` frames. Returns the boxes emitted this frame with IDs filled in.
/// An empty `end_scores` disables explicit ends.
std::vector<LabeledBox> birth_death_update(const Assignment& assignment, TrackletStore& store,
                                           int frame, const std::vector<LabeledBox>& detections,
                                           const Matrix& features, int max_age,
                                           const Vector& end_scores = {},
                                           double end_threshold = 0.5);

}  // namespace fusiontrack::association
