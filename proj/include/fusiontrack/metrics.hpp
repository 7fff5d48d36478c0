#pragma once

#include "fusiontrack/kitti_io.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fusiontrack::metrics {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Intersection over union of two boxes; 0 when either is degenerate.
double iou(const BBox& a, const BBox& b);

/// Previous correspondences, GT track id -> predicted track id.
using MatchMap = std::map<int, int>;

struct FrameMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt index, pred index)
  std::vector<std::size_t> unmatched_gt;
  std::vector<std::size_t> unmatched_pred;
  std::vector<double> overlap;  // IoU per pair
};

/// Keeps previous pairs that still overlap by at least `iou_thr`, then matches the
/// rest to maximize the number of pairs and, among those, the summed IoU.
FrameMatch match_frame(const std::vector<LabeledBox>& gt, const std::vector<LabeledBox>& pred,
                       const MatchMap& prev, double iou_thr);

struct EvalOptions {
  double iou_thr = 0.5;
  std::string class_filter;  // empty keeps every class except DontCare
};

struct EvalReport {
  double MOTA = 0.0;
  double MOTP = 0.0;
  long IDS = 0;
  long FRAG = 0;
  long FN = 0;
  long FP = 0;
  double MT = 0.0;  // fraction of GT trajectories
  double ML = 0.0;
  double HOTA = 0.0;
  double DetA = 0.0;
  double AssA = 0.0;

  long gt_total = 0;
  long matches = 0;
  long gt_tracks = 0;
  std::vector<std::pair<std::string, EvalReport>> sequences;
};

using Sequences = std::map<std::string, FrameBoxes>;

/// CLEAR MOT part only (HOTA fields left at zero).
EvalReport compute_clearmot(const Sequences& gt, const Sequences& pred,
                            const EvalOptions& options = {});

struct HotaResult {
  double HOTA = 0.0;
  double DetA = 0.0;
  double AssA = 0.0;
  std::vector<double> hota_alpha;  // 19 entries, alpha = 0.05 .. 0.95
  std::vector<double> deta_alpha;
  std::vector<double> assa_alpha;
};

HotaResult compute_hota(const Sequences& gt, const Sequences& pred, const EvalOptions& options = {});

/// Both metric families, with per-sequence breakdown.
EvalReport evaluate(const Sequences& gt, const Sequences& pred, const EvalOptions& options = {});

std::string format_table(const EvalReport& report);
/// One `NAME=value` line per column.
std::string format_key_values(const EvalReport& report);

}  // namespace fusiontrack::metrics
