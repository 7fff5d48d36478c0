#include "fusiontrack/metrics.hpp"

#include "fusiontrack/association.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace fusiontrack::metrics {

namespace {

using association::Index;
using association::Matrix;
using association::Vector;

constexpr int kAlphas = 19;
constexpr double kEps = 1e-10;  // guards α comparisons against rounding, as in TrackEval

double alpha_at(int k) { return 0.05 * (k + 1); }

struct FilteredFrame {
  std::vector<LabeledBox> gt;
  std::vector<LabeledBox> dontcare;
  std::vector<LabeledBox> pred;
};

bool is_dontcare(const LabeledBox& b) { return b.class_name == "DontCare"; }

bool keep_class(const LabeledBox& b, const EvalOptions& options) {
  if (is_dontcare(b)) return false;
  return options.class_filter.empty() || b.class_name == options.class_filter;
}

std::map<int, FilteredFrame> align(const FrameBoxes& gt, const FrameBoxes* pred,
                                   const EvalOptions& options) {
  std::map<int, FilteredFrame> frames;
  for (const auto& [f, boxes] : gt) {
    auto& slot = frames[f];
    for (const auto& b : boxes) {
      if (is_dontcare(b)) {
        slot.dontcare.push_back(b);
      } else if (keep_class(b, options)) {
        slot.gt.push_back(b);
      }
    }
  }
  if (pred) {
    for (const auto& [f, boxes] : *pred) {
      auto& slot = frames[f];
      for (const auto& b : boxes)
        if (keep_class(b, options)) slot.pred.push_back(b);
    }
  }
  return frames;
}

const FrameBoxes* find_pred(const Sequences& pred, const std::string& name) {
  const auto it = pred.find(name);
  return it == pred.end() ? nullptr : &it->second;
}

void check_alignment(const Sequences& gt, const Sequences& pred) {
  if (gt.empty()) throw EvalError("no ground-truth sequences");
  for (const auto& [name, frames] : pred) {
    (void)frames;
    if (!gt.contains(name)) throw EvalError("results for sequence '" + name + "' have no ground truth");
  }
}

Matrix iou_matrix(const std::vector<LabeledBox>& gt, const std::vector<LabeledBox>& pred) {
  Matrix m(static_cast<Index>(gt.size()), static_cast<Index>(pred.size()));
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = iou(gt[i].bbox, pred[j].bbox);
  return m;
}

// Maximum-weight matching over nonnegative link scores; entries at or below
// zero never link.
std::vector<std::pair<Index, Index>> max_weight_matching(const Matrix& score) {
  Matrix s = score;
  for (Index i = 0; i < s.rows(); ++i)
    for (Index j = 0; j < s.cols(); ++j)
      if (!(s(i, j) > 0.0)) s(i, j) = -1.0;
  const auto problem = association::make_flow_problem(s, Vector::Zero(s.cols()), Vector::Zero(s.rows()));
  return association::solve_assignment(problem).links;
}

struct ClearCounts {
  long fn = 0, fp = 0, ids = 0, frag = 0, matches = 0, gt_total = 0;
  long gt_tracks = 0, mt = 0, ml = 0;
  double iou_sum = 0.0;

  void add(const ClearCounts& o) {
    fn += o.fn;
    fp += o.fp;
    ids += o.ids;
    frag += o.frag;
    matches += o.matches;
    gt_total += o.gt_total;
    gt_tracks += o.gt_tracks;
    mt += o.mt;
    ml += o.ml;
    iou_sum += o.iou_sum;
  }
};

struct TrackHistory {
  int present = 0;
  int tracked = 0;
  bool has_match = false;
  int last_pred = -1;
  bool tracked_at_last_appearance = false;
};

double intersection_over_pred(const BBox& pred, const BBox& region) {
  const double w = std::min(pred.x2, region.x2) - std::max(pred.x1, region.x1);
  const double h = std::min(pred.y2, region.y2) - std::max(pred.y1, region.y1);
  if (w <= 0.0 || h <= 0.0 || pred.area() <= 0.0) return 0.0;
  return w * h / pred.area();
}

ClearCounts clear_sequence(const std::map<int, FilteredFrame>& frames, double thr) {
  ClearCounts c;
  std::map<int, TrackHistory> history;
  MatchMap prev;
  for (const auto& [f, frame] : frames) {
    (void)f;
    const FrameMatch m = match_frame(frame.gt, frame.pred, prev, thr);
    c.gt_total += static_cast<long>(frame.gt.size());
    c.fn += static_cast<long>(m.unmatched_gt.size());
    for (std::size_t j : m.unmatched_pred) {
      const bool ignored = std::any_of(frame.dontcare.begin(), frame.dontcare.end(), [&](const LabeledBox& d) {
        return intersection_over_pred(frame.pred[j].bbox, d.bbox) >= 0.5;
      });
      if (!ignored) ++c.fp;
    }
    MatchMap current;
    std::set<std::size_t> matched_gt;
    for (std::size_t p = 0; p < m.pairs.size(); ++p) {
      const auto [gi, pj] = m.pairs[p];
      const int gid = frame.gt[gi].track_id;
      const int pid = frame.pred[pj].track_id;
      auto& h = history[gid];
      const bool switched = h.has_match && h.last_pred != pid;
      if (switched) ++c.ids;
      if (h.has_match && (switched || !h.tracked_at_last_appearance)) ++c.frag;
      h.has_match = true;
      h.last_pred = pid;
      current[gid] = pid;
      matched_gt.insert(gi);
      ++c.matches;
      c.iou_sum += m.overlap[p];
    }
    for (std::size_t gi = 0; gi < frame.gt.size(); ++gi) {
      auto& h = history[frame.gt[gi].track_id];
      ++h.present;
      const bool tracked = matched_gt.contains(gi);
      if (tracked) ++h.tracked;
      h.tracked_at_last_appearance = tracked;
    }
    prev = std::move(current);
  }
  for (const auto& [gid, h] : history) {
    (void)gid;
    ++c.gt_tracks;
    const double ratio = static_cast<double>(h.tracked) / h.present;
    if (ratio >= 0.8) {
      ++c.mt;
    } else if (ratio <= 0.2) {
      ++c.ml;
    }
  }
  return c;
}

void fill_clear(EvalReport& r, const ClearCounts& c) {
  if (c.gt_total == 0) throw EvalError("ground truth contains no boxes");
  r.FN = c.fn;
  r.FP = c.fp;
  r.IDS = c.ids;
  r.FRAG = c.frag;
  r.gt_total = c.gt_total;
  r.matches = c.matches;
  r.gt_tracks = c.gt_tracks;
  r.MOTA = 1.0 - static_cast<double>(c.fn + c.fp + c.ids) / static_cast<double>(c.gt_total);
  r.MOTP = c.matches > 0 ? c.iou_sum / static_cast<double>(c.matches) : 0.0;
  r.MT = c.gt_tracks > 0 ? static_cast<double>(c.mt) / static_cast<double>(c.gt_tracks) : 0.0;
  r.ML = c.gt_tracks > 0 ? static_cast<double>(c.ml) / static_cast<double>(c.gt_tracks) : 0.0;
}

struct HotaCounts {
  std::array<double, kAlphas> tp{}, fn{}, fp{}, ass{};  // ass = sum over TPs of per-pair AssA

  void add(const HotaCounts& o) {
    for (int a = 0; a < kAlphas; ++a) {
      tp[a] += o.tp[a];
      fn[a] += o.fn[a];
      fp[a] += o.fp[a];
      ass[a] += o.ass[a];
    }
  }
};

HotaCounts hota_sequence(const std::map<int, FilteredFrame>& frames) {
  std::map<int, Index> gt_ids, pred_ids;
  for (const auto& [f, frame] : frames) {
    (void)f;
    for (const auto& b : frame.gt) gt_ids.try_emplace(b.track_id, static_cast<Index>(gt_ids.size()));
    for (const auto& b : frame.pred) pred_ids.try_emplace(b.track_id, static_cast<Index>(pred_ids.size()));
  }
  const auto ng = static_cast<Index>(gt_ids.size());
  const auto np = static_cast<Index>(pred_ids.size());
  HotaCounts h;

  // global alignment: how consistently each (gt id, pred id) pair overlaps
  Matrix potential = Matrix::Zero(ng, np);
  Vector gt_count = Vector::Zero(ng);
  Vector pred_count = Vector::Zero(np);
  std::map<int, Matrix> sims;
  for (const auto& [f, frame] : frames) {
    const Matrix sim = iou_matrix(frame.gt, frame.pred);
    sims[f] = sim;
    for (const auto& b : frame.gt) gt_count(gt_ids.at(b.track_id)) += 1.0;
    for (const auto& b : frame.pred) pred_count(pred_ids.at(b.track_id)) += 1.0;
    if (sim.size() == 0) continue;
    const Vector row_sum = sim.rowwise().sum();
    const Eigen::RowVectorXd col_sum = sim.colwise().sum();
    for (Index i = 0; i < sim.rows(); ++i) {
      for (Index j = 0; j < sim.cols(); ++j) {
        const double denom = row_sum(i) + col_sum(j) - sim(i, j);
        if (denom <= 0.0) continue;
        potential(gt_ids.at(frame.gt[static_cast<std::size_t>(i)].track_id),
                  pred_ids.at(frame.pred[static_cast<std::size_t>(j)].track_id)) += sim(i, j) / denom;
      }
    }
  }
  Matrix global = Matrix::Zero(ng, np);
  for (Index a = 0; a < ng; ++a)
    for (Index b = 0; b < np; ++b) {
      const double denom = gt_count(a) + pred_count(b) - potential(a, b);
      if (denom > 0.0) global(a, b) = potential(a, b) / denom;
    }

  std::vector<Matrix> match_counts(kAlphas, Matrix::Zero(ng, np));
  for (const auto& [f, frame] : frames) {
    const Matrix& sim = sims.at(f);
    const auto g = static_cast<double>(frame.gt.size());
    const auto p = static_cast<double>(frame.pred.size());
    if (sim.size() == 0) {
      for (int a = 0; a < kAlphas; ++a) {
        h.fn[a] += g;
        h.fp[a] += p;
      }
      continue;
    }
    Matrix score(sim.rows(), sim.cols());
    for (Index i = 0; i < sim.rows(); ++i)
      for (Index j = 0; j < sim.cols(); ++j)
        score(i, j) = global(gt_ids.at(frame.gt[static_cast<std::size_t>(i)].track_id),
                             pred_ids.at(frame.pred[static_cast<std::size_t>(j)].track_id)) *
                      sim(i, j);
    const auto links = max_weight_matching(score);
    for (int a = 0; a < kAlphas; ++a) {
      double tp = 0.0;
      for (const auto& [i, j] : links) {
        if (sim(i, j) < alpha_at(a) - kEps) continue;
        tp += 1.0;
        match_counts[static_cast<std::size_t>(a)](gt_ids.at(frame.gt[static_cast<std::size_t>(i)].track_id),
                                                  pred_ids.at(frame.pred[static_cast<std::size_t>(j)].track_id)) += 1.0;
      }
      h.tp[a] += tp;
      h.fn[a] += g - tp;
      h.fp[a] += p - tp;
    }
  }
  for (int a = 0; a < kAlphas; ++a) {
    const Matrix& mc = match_counts[static_cast<std::size_t>(a)];
    double total = 0.0;
    for (Index i = 0; i < ng; ++i)
      for (Index j = 0; j < np; ++j) {
        if (mc(i, j) == 0.0) continue;
        total += mc(i, j) * mc(i, j) / (gt_count(i) + pred_count(j) - mc(i, j));
      }
    h.ass[a] = total;
  }
  return h;
}

HotaResult finish_hota(const HotaCounts& h) {
  HotaResult r;
  for (int a = 0; a < kAlphas; ++a) {
    const double det_denom = h.tp[a] + h.fn[a] + h.fp[a];
    const double det = det_denom > 0.0 ? h.tp[a] / det_denom : 0.0;
    const double ass = h.tp[a] > 0.0 ? h.ass[a] / h.tp[a] : 0.0;
    r.deta_alpha.push_back(det);
    r.assa_alpha.push_back(ass);
    r.hota_alpha.push_back(std::sqrt(det * ass));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.HOTA = mean(r.hota_alpha);
  r.DetA = mean(r.deta_alpha);
  r.AssA = mean(r.assa_alpha);
  return r;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

FrameMatch match_frame(const std::vector<LabeledBox>& gt, const std::vector<LabeledBox>& pred,
                       const MatchMap& prev, double iou_thr) {
  FrameMatch out;
  std::vector<bool> gt_used(gt.size(), false);
  std::vector<bool> pred_used(pred.size(), false);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto it = prev.find(gt[i].track_id);
    if (it == prev.end()) continue;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (pred_used[j] || pred[j].track_id != it->second) continue;
      const double o = iou(gt[i].bbox, pred[j].bbox);
      if (o >= iou_thr) {
        out.pairs.emplace_back(i, j);
        out.overlap.push_back(o);
        gt_used[i] = pred_used[j] = true;
        break;
      }
    }
  }

  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!gt_used[i]) rows.push_back(i);
  for (std::size_t j = 0; j < pred.size(); ++j)
    if (!pred_used[j]) cols.push_back(j);
  if (!rows.empty() && !cols.empty()) {
    // Each valid link is worth more than any sum of IoUs, so the count is
    // maximized first and total overlap second.
    const double bonus = static_cast<double>(std::min(rows.size(), cols.size())) + 1.0;
    Matrix s(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    Matrix o(s.rows(), s.cols());
    for (Index r = 0; r < s.rows(); ++r)
      for (Index c = 0; c < s.cols(); ++c) {
        o(r, c) = iou(gt[rows[static_cast<std::size_t>(r)]].bbox, pred[cols[static_cast<std::size_t>(c)]].bbox);
        s(r, c) = o(r, c) >= iou_thr ? bonus + o(r, c) : -1.0;
      }
    const auto problem = association::make_flow_problem(s, Vector::Zero(s.cols()), Vector::Zero(s.rows()));
    for (const auto& [r, c] : association::solve_assignment(problem).links) {
      out.pairs.emplace_back(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
      out.overlap.push_back(o(r, c));
      gt_used[rows[static_cast<std::size_t>(r)]] = true;
      pred_used[cols[static_cast<std::size_t>(c)]] = true;
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!gt_used[i]) out.unmatched_gt.push_back(i);
  for (std::size_t j = 0; j < pred.size(); ++j)
    if (!pred_used[j]) out.unmatched_pred.push_back(j);
  return out;
}

EvalReport compute_clearmot(const Sequences& gt, const Sequences& pred, const EvalOptions& options) {
  check_alignment(gt, pred);
  EvalReport report;
  ClearCounts total;
  for (const auto& [name, frames] : gt) {
    const ClearCounts c = clear_sequence(align(frames, find_pred(pred, name), options), options.iou_thr);
    EvalReport seq;
    if (c.gt_total > 0) fill_clear(seq, c);
    report.sequences.emplace_back(name, std::move(seq));
    total.add(c);
  }
  fill_clear(report, total);
  return report;
}

HotaResult compute_hota(const Sequences& gt, const Sequences& pred, const EvalOptions& options) {
  check_alignment(gt, pred);
  HotaCounts total;
  bool any_gt = false;
  for (const auto& [name, frames] : gt) {
    const auto aligned = align(frames, find_pred(pred, name), options);
    for (const auto& [f, fr] : aligned) {
      (void)f;
      any_gt = any_gt || !fr.gt.empty();
    }
    total.add(hota_sequence(aligned));
  }
  if (!any_gt) throw EvalError("ground truth contains no boxes");
  return finish_hota(total);
}

EvalReport evaluate(const Sequences& gt, const Sequences& pred, const EvalOptions& options) {
  EvalReport report = compute_clearmot(gt, pred, options);
  const HotaResult h = compute_hota(gt, pred, options);
  report.HOTA = h.HOTA;
  report.DetA = h.DetA;
  report.AssA = h.AssA;
  for (auto& [name, seq] : report.sequences) {
    if (seq.gt_total == 0) continue;
    Sequences g{{name, gt.at(name)}};
    Sequences p;
    if (const auto it = pred.find(name); it != pred.end()) p.emplace(name, it->second);
    const HotaResult hs = compute_hota(g, p, options);
    seq.HOTA = hs.HOTA;
    seq.DetA = hs.DetA;
    seq.AssA = hs.AssA;
  }
  return report;
}

namespace {

void table_row(std::ostringstream& out, const std::string& name, const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %9.6f %9.6f %6ld %6ld %7ld %7ld %9.6f %9.6f %9.6f %9.6f %9.6f\n",
                name.c_str(), r.MOTA, r.MOTP, r.IDS, r.FRAG, r.FN, r.FP, r.MT, r.ML, r.HOTA, r.DetA, r.AssA);
  out << buf;
}

}  // namespace

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %6s %6s %7s %7s %9s %9s %9s %9s %9s\n", "sequence", "MOTA",
                "MOTP", "IDS", "FRAG", "FN", "FP", "MT", "ML", "HOTA", "DetA", "AssA");
  out << buf;
  for (const auto& [name, seq] : report.sequences) table_row(out, name, seq);
  table_row(out, "all", report);
  return out.str();
}

std::string format_key_values(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "MOTA=%.6f\nMOTP=%.6f\nIDS=%ld\nFRAG=%ld\nFN=%ld\nFP=%ld\nMT=%.6f\nML=%.6f\n"
                "HOTA=%.6f\nDetA=%.6f\nAssA=%.6f\n",
                r.MOTA, r.MOTP, r.IDS, r.FRAG, r.FN, r.FP, r.MT, r.ML, r.HOTA, r.DetA, r.AssA);
  return buf;
}

}  // namespace fusiontrack::metrics
