#pragma once

// Straight-line CLEAR MOT and HOTA for small single-sequence fixtures, using
// exhaustive per-frame matching instead of the assignment solver.

#include "fusiontrack/kitti_io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace oracle {

inline double box_iou(const fusiontrack::BBox& a, const fusiontrack::BBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  if (inter <= 0.0) return 0.0;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// Every injective partial map rows -> cols; calls visit(assign) with -1 for unmatched.
inline void each_matching(std::size_t rows, std::size_t cols,
                          const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> a(rows, -1);
  std::vector<bool> used(cols, false);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == rows) {
      visit(a);
      return;
    }
    a[i] = -1;
    rec(i + 1);
    for (std::size_t j = 0; j < cols; ++j) {
      if (used[j]) continue;
      used[j] = true;
      a[i] = static_cast<int>(j);
      rec(i + 1);
      used[j] = false;
    }
    a[i] = -1;
  };
  rec(0);
}

struct Clear {
  long fn = 0, fp = 0, ids = 0, matches = 0, gt = 0;
  double iou_sum = 0.0;
  double mota() const { return 1.0 - static_cast<double>(fn + fp + ids) / static_cast<double>(gt); }
};

inline Clear clear(const fusiontrack::FrameBoxes& gt, const fusiontrack::FrameBoxes& pred, double thr = 0.5) {
  Clear c;
  std::map<int, int> prev, last_match;
  std::set<int> frames;
  for (const auto& [f, b] : gt) frames.insert(f);
  for (const auto& [f, b] : pred) frames.insert(f);
  static const std::vector<fusiontrack::LabeledBox> none;
  for (int f : frames) {
    const auto& g = gt.count(f) ? gt.at(f) : none;
    const auto& p = pred.count(f) ? pred.at(f) : none;
    c.gt += static_cast<long>(g.size());
    std::vector<int> fixed(g.size(), -1);
    std::vector<bool> taken(p.size(), false);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!prev.count(g[i].track_id)) continue;
      for (std::size_t j = 0; j < p.size(); ++j)
        if (!taken[j] && p[j].track_id == prev.at(g[i].track_id) && box_iou(g[i].bbox, p[j].bbox) >= thr) {
          fixed[i] = static_cast<int>(j);
          taken[j] = true;
          break;
        }
    }
    std::vector<std::size_t> rows, cols;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (fixed[i] < 0) rows.push_back(i);
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!taken[j]) cols.push_back(j);
    std::vector<int> best;
    long best_count = -1;
    double best_sum = -1.0;
    each_matching(rows.size(), cols.size(), [&](const std::vector<int>& a) {
      long count = 0;
      double sum = 0.0;
      for (std::size_t r = 0; r < a.size(); ++r) {
        if (a[r] < 0) continue;
        const double o = box_iou(g[rows[r]].bbox, p[cols[static_cast<std::size_t>(a[r])]].bbox);
        if (o < thr) return;
        ++count;
        sum += o;
      }
      if (count > best_count || (count == best_count && sum > best_sum + 1e-12)) {
        best = a;
        best_count = count;
        best_sum = sum;
      }
    });
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (best[r] >= 0) fixed[rows[r]] = static_cast<int>(cols[static_cast<std::size_t>(best[r])]);
    std::map<int, int> now;
    long matched = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (fixed[i] < 0) {
        ++c.fn;
        continue;
      }
      ++matched;
      const auto& pb = p[static_cast<std::size_t>(fixed[i])];
      const int gid = g[i].track_id;
      if (last_match.count(gid) && last_match.at(gid) != pb.track_id) ++c.ids;
      last_match[gid] = pb.track_id;
      now[gid] = pb.track_id;
      c.iou_sum += box_iou(g[i].bbox, pb.bbox);
    }
    c.matches += matched;
    c.fp += static_cast<long>(p.size()) - matched;
    prev = now;
  }
  return c;
}

struct Hota {
  double hota = 0.0, deta = 0.0, assa = 0.0;
};

inline Hota hota(const fusiontrack::FrameBoxes& gt, const fusiontrack::FrameBoxes& pred) {
  std::set<int> frames;
  for (const auto& [f, b] : gt) frames.insert(f);
  for (const auto& [f, b] : pred) frames.insert(f);
  static const std::vector<fusiontrack::LabeledBox> none;
  auto at = [](const fusiontrack::FrameBoxes& m, int f) -> const std::vector<fusiontrack::LabeledBox>& {
    return m.count(f) ? m.at(f) : none;
  };
  std::map<int, double> gcount, pcount;
  std::map<std::pair<int, int>, double> potential;
  for (int f : frames) {
    const auto& g = at(gt, f);
    const auto& p = at(pred, f);
    for (const auto& b : g) gcount[b.track_id] += 1;
    for (const auto& b : p) pcount[b.track_id] += 1;
    for (const auto& a : g) {
      double row = 0.0;
      for (const auto& b : p) row += box_iou(a.bbox, b.bbox);
      for (const auto& b : p) {
        double col = 0.0;
        for (const auto& a2 : g) col += box_iou(a2.bbox, b.bbox);
        const double s = box_iou(a.bbox, b.bbox);
        if (s > 0) potential[{a.track_id, b.track_id}] += s / (row + col - s);
      }
    }
  }
  auto global = [&](int gid, int pid) {
    const auto it = potential.find({gid, pid});
    const double v = it == potential.end() ? 0.0 : it->second;
    return v / (gcount[gid] + pcount[pid] - v);
  };
  Hota out;
  for (int k = 0; k < 19; ++k) {
    const double alpha = 0.05 * (k + 1);
    double tp = 0, fn = 0, fp = 0;
    std::map<std::pair<int, int>, double> mc;
    for (int f : frames) {
      const auto& g = at(gt, f);
      const auto& p = at(pred, f);
      std::vector<int> best;
      double best_score = -1.0;
      each_matching(g.size(), p.size(), [&](const std::vector<int>& a) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
          if (a[i] >= 0) s += global(g[i].track_id, p[static_cast<std::size_t>(a[i])].track_id) *
                              box_iou(g[i].bbox, p[static_cast<std::size_t>(a[i])].bbox);
        if (s > best_score + 1e-12) {
          best_score = s;
          best = a;
        }
      });
      double hits = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (best[i] < 0) continue;
        const auto& b = p[static_cast<std::size_t>(best[i])];
        if (box_iou(g[i].bbox, b.bbox) >= alpha - 1e-10) {
          hits += 1;
          mc[{g[i].track_id, b.track_id}] += 1;
        }
      }
      tp += hits;
      fn += static_cast<double>(g.size()) - hits;
      fp += static_cast<double>(p.size()) - hits;
    }
    double ass = 0.0;
    for (const auto& [key, m] : mc) ass += m * (m / (gcount[key.first] + pcount[key.second] - m));
    const double assa = tp > 0 ? ass / tp : 0.0;
    const double deta = tp / std::max(1.0, tp + fn + fp);
    out.deta += deta / 19;
    out.assa += assa / 19;
    out.hota += std::sqrt(deta * assa) / 19;
  }
  return out;
}

}  // namespace oracle
