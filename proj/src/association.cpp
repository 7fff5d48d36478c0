#include "fusiontrack/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fusiontrack::association {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double tolerance(const FlowProblem& p) {
  double scale = 1.0;
  scale += p.affinity.cwiseAbs().sum();
  scale += p.new_logit.cwiseAbs().sum();
  scale += p.end_logit.cwiseAbs().sum();
  return 1e-12 * scale;
}

struct Solution {
  std::vector<Index> row_to_col;
  Matrix reduced;  // a - u - v
};

// Shortest augmenting path Hungarian method for a square minimization problem.
// Infinite entries are forbidden; a finite perfect matching must exist.
Solution hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<Index> way(static_cast<std::size_t>(n) + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      if (j1 == 0 || delta == kInf) throw std::logic_error("assignment problem is infeasible");
      for (Index j = 0; j <= n; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j) s.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  s.reduced.resize(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      s.reduced(i, j) = cost(i, j) - u[static_cast<std::size_t>(i) + 1] - v[static_cast<std::size_t>(j) + 1];
  return s;
}

// Rows: M tracklets, then R virtual "new" rows. Columns: R detections, then M
// virtual "end" columns. Costs are negated scores.
Matrix square_cost(const FlowProblem& p) {
  const Index m = p.tracklets();
  const Index r = p.retained();
  Matrix c = Matrix::Constant(m + r, r + m, kInf);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < r; ++j) c(i, j) = -p.affinity(i, j);
    c(i, r + i) = -p.end_logit(i);
  }
  for (Index j = 0; j < r; ++j) {
    c(m + j, j) = -p.new_logit(j);
    for (Index i = 0; i < m; ++i) c(m + j, r + i) = 0.0;
  }
  return c;
}

// choice[i] in [0, R) links tracklet i to that retained column; R means end.
Assignment from_choices(const FlowProblem& p, const std::vector<Index>& choice) {
  Assignment a;
  const Index r = p.retained();
  std::vector<bool> taken(static_cast<std::size_t>(r), false);
  for (std::size_t i = 0; i < choice.size(); ++i) {
    if (choice[i] < r) {
      a.links.emplace_back(static_cast<Index>(i), p.detection[static_cast<std::size_t>(choice[i])]);
      taken[static_cast<std::size_t>(choice[i])] = true;
    } else {
      a.deaths.push_back(static_cast<Index>(i));
    }
  }
  for (Index j = 0; j < r; ++j)
    if (!taken[static_cast<std::size_t>(j)]) a.births.push_back(p.detection[static_cast<std::size_t>(j)]);
  a.discarded = p.discarded;
  std::sort(a.births.begin(), a.births.end());
  return a;
}

std::vector<Index> choices_of(const Solution& s, Index m, Index r) {
  std::vector<Index> choice(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const Index col = s.row_to_col[static_cast<std::size_t>(i)];
    choice[static_cast<std::size_t>(i)] = col < r ? col : r;
  }
  return choice;
}

// Restricts row i of the square cost to column `col` (and column `col` to row i).
void force(Matrix& cost, Index i, Index col) {
  const double keep = cost(i, col);
  cost.row(i).setConstant(kInf);
  cost.col(col).setConstant(kInf);
  cost(i, col) = keep;
}

}  // namespace

FlowProblem build_flow_problem(const AdjacencyScores& scores, double conf_threshold) {
  const Index m = scores.affinity.rows();
  const Index n = scores.affinity.cols();
  if (scores.new_score.size() != n || scores.confidence.size() != n || scores.end_score.size() != m) {
    throw nn::ShapeError("adjacency scores have inconsistent sizes");
  }
  FlowProblem p;
  p.total_detections = n;
  for (Index j = 0; j < n; ++j) {
    if (scores.confidence(j) < conf_threshold) {
      p.discarded.push_back(j);
    } else {
      p.detection.push_back(j);
    }
  }
  const auto r = static_cast<Index>(p.detection.size());
  p.affinity.resize(m, r);
  p.new_logit.resize(r);
  for (Index c = 0; c < r; ++c) {
    const Index j = p.detection[static_cast<std::size_t>(c)];
    p.affinity.col(c) = scores.affinity.col(j);
    p.new_logit(c) = nn::logit(scores.new_score(j));
  }
  p.end_logit.resize(m);
  for (Index i = 0; i < m; ++i) p.end_logit(i) = nn::logit(scores.end_score(i));
  return p;
}

FlowProblem make_flow_problem(Matrix affinity, Vector new_logit, Vector end_logit) {
  if (new_logit.size() != affinity.cols() || end_logit.size() != affinity.rows()) {
    throw nn::ShapeError("flow problem sizes disagree");
  }
  FlowProblem p;
  p.total_detections = affinity.cols();
  for (Index j = 0; j < affinity.cols(); ++j) p.detection.push_back(j);
  p.affinity = std::move(affinity);
  p.new_logit = std::move(new_logit);
  p.end_logit = std::move(end_logit);
  return p;
}

double objective(const FlowProblem& p, const Assignment& a) {
  std::vector<Index> column_of(static_cast<std::size_t>(p.total_detections), -1);
  for (std::size_t c = 0; c < p.detection.size(); ++c)
    column_of[static_cast<std::size_t>(p.detection[c])] = static_cast<Index>(c);
  double total = 0.0;
  for (const auto& [i, j] : a.links) total += p.affinity(i, column_of[static_cast<std::size_t>(j)]);
  for (Index j : a.births) total += p.new_logit(column_of[static_cast<std::size_t>(j)]);
  for (Index i : a.deaths) total += p.end_logit(i);
  return total;
}

Assignment solve_assignment(const FlowProblem& problem) {
  const Index m = problem.tracklets();
  const Index r = problem.retained();
  if (m + r == 0) {
    Assignment a;
    a.discarded = problem.discarded;
    return a;
  }
  const double tol = tolerance(problem);
  Matrix cost = square_cost(problem);
  Solution best = hungarian(cost);
  std::vector<Index> choice = choices_of(best, m, r);
  double best_value = objective(problem, from_choices(problem, choice));

  // Lexicographic tie-breaking: a cheaper choice for row i can only be optimal
  // if its reduced cost is zero under the current optimal duals.
  for (Index i = 0; i < m; ++i) {
    const Index current = choice[static_cast<std::size_t>(i)];
    for (Index alt = 0; alt < current; ++alt) {
      if (best.reduced(i, alt) > tol || !std::isfinite(cost(i, alt))) continue;
      Matrix trial_cost = cost;
      force(trial_cost, i, alt);
      Solution trial = hungarian(trial_cost);
      std::vector<Index> trial_choice = choices_of(trial, m, r);
      const double value = objective(problem, from_choices(problem, trial_choice));
      if (value >= best_value - tol) {
        best = std::move(trial);
        choice = std::move(trial_choice);
        best_value = std::max(best_value, value);
        break;
      }
    }
    const Index col = choice[static_cast<std::size_t>(i)];
    force(cost, i, col < r ? col : r + i);
  }
  return from_choices(problem, choice);
}

Assignment brute_force_assignment(const FlowProblem& problem) {
  const Index m = problem.tracklets();
  if (m > 6 || problem.total_detections > 6) {
    throw std::invalid_argument("brute_force_assignment supports at most 6 tracklets and detections");
  }
  const Index r = problem.retained();
  const double tol = tolerance(problem);
  std::vector<Index> choice(static_cast<std::size_t>(m), r);
  std::vector<Index> best_choice = choice;
  double best = -kInf;
  std::vector<bool> used(static_cast<std::size_t>(r), false);

  // choices per tracklet enumerated as detections 0..R-1, then end
  auto recurse = [&](auto&& self, Index i) -> void {
    if (i == m) {
      const double value = objective(problem, from_choices(problem, choice));
      if (value > best + tol) {
        best = value;
        best_choice = choice;
      }
      return;
    }
    for (Index c = 0; c <= r; ++c) {
      if (c < r && used[static_cast<std::size_t>(c)]) continue;
      choice[static_cast<std::size_t>(i)] = c;
      if (c < r) used[static_cast<std::size_t>(c)] = true;
      self(self, i + 1);
      if (c < r) used[static_cast<std::size_t>(c)] = false;
    }
  };
  recurse(recurse, 0);
  return from_choices(problem, best_choice);
}

LinearRelaxation linear_relaxation(const FlowProblem& p) {
  const Index m = p.tracklets();
  const Index r = p.retained();
  LinearRelaxation lp;
  lp.A = Matrix::Zero(p.constraints(), p.variables());
  lp.b = Vector::Ones(p.constraints());
  lp.c = Vector::Zero(p.variables());
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < r; ++j) {
      const Index var = i * r + j;
      lp.c(var) = p.affinity(i, j);
      lp.A(j, var) = 1.0;      // detection j row
      lp.A(r + i, var) = 1.0;  // tracklet i row
    }
  }
  for (Index j = 0; j < r; ++j) {
    lp.c(m * r + j) = p.new_logit(j);
    lp.A(j, m * r + j) = 1.0;
  }
  for (Index i = 0; i < m; ++i) {
    lp.c(m * r + r + i) = p.end_logit(i);
    lp.A(r + i, m * r + r + i) = 1.0;
  }
  return lp;
}

Assignment assignment_from_solution(const FlowProblem& p, const Vector& y) {
  const Index m = p.tracklets();
  const Index r = p.retained();
  std::vector<Index> choice(static_cast<std::size_t>(m), r);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < r; ++j)
      if (y(i * r + j) > 0.5) choice[static_cast<std::size_t>(i)] = j;
  return from_choices(p, choice);
}

std::string format_assignment(const Assignment& a, int frame) {
  std::ostringstream out;
  for (const auto& [i, j] : a.links) out << "frame " << frame << " link " << i << ' ' << j << '\n';
  for (Index j : a.births) out << "frame " << frame << " birth " << j << '\n';
  for (Index i : a.deaths) out << "frame " << frame << " end " << i << '\n';
  for (Index j : a.discarded) out << "frame " << frame << " discard " << j << '\n';
  return out.str();
}

// ---- heads ----

EstimatorHeads add_estimator_heads(ParamStore& store, const std::string& name, Index width,
                                   std::uint64_t seed) {
  using nn::Activation;
  const std::vector<Index> pair_dims{3 * width, width, 1};
  const std::vector<Index> row_dims{width, width, 1};
  EstimatorHeads h;
  h.affinity = nn::add_mlp(store, name + ".affinity", pair_dims, Activation::relu, Activation::identity, seed);
  h.new_head = nn::add_mlp(store, name + ".new", row_dims, Activation::relu, Activation::identity, seed);
  h.end_head = nn::add_mlp(store, name + ".end", row_dims, Activation::relu, Activation::identity, seed);
  h.confidence = nn::add_mlp(store, name + ".confidence", row_dims, Activation::relu, Activation::identity, seed);
  return h;
}

Matrix estimate_affinity(const ParamStore& store, const nn::Mlp& head, const Matrix& prev,
                         const Matrix& cur, AffinityTape* tape) {
  const Index m = prev.rows();
  const Index n = cur.rows();
  if (m > 0 && n > 0 && prev.cols() != cur.cols()) {
    throw nn::ShapeError("estimate_affinity: feature widths differ (" + std::to_string(prev.cols()) +
                         " vs " + std::to_string(cur.cols()) + ")");
  }
  if (m == 0 || n == 0) {
    if (tape) *tape = AffinityTape{m, n, Matrix(), {}};
    return Matrix(m, n);
  }
  const Index d = prev.cols();
  Matrix pairs(m * n, 3 * d);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      const Index row = i * n + j;
      pairs.row(row).segment(0, d) = prev.row(i);
      pairs.row(row).segment(d, d) = cur.row(j);
      pairs.row(row).segment(2 * d, d) = (prev.row(i) - cur.row(j)).cwiseAbs();
    }
  }
  nn::MlpTape* mt = tape ? &tape->mlp : nullptr;
  const Matrix flat = nn::mlp_forward(store, head, pairs, mt);
  Matrix scores(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) scores(i, j) = flat(i * n + j, 0);
  if (tape) {
    tape->prev_rows = m;
    tape->cur_rows = n;
    tape->pairs = std::move(pairs);
  }
  return scores;
}

AffinityGrad estimate_affinity_backward(ParamStore& grads, const nn::Mlp& head,
                                        const AffinityTape& tape, const Matrix& grad_scores) {
  const Index m = tape.prev_rows;
  const Index n = tape.cur_rows;
  AffinityGrad out;
  if (m == 0 || n == 0) {
    out.prev = Matrix::Zero(m, tape.pairs.cols() / 3);
    out.cur = Matrix::Zero(n, tape.pairs.cols() / 3);
    return out;
  }
  const Index d = tape.pairs.cols() / 3;
  Matrix flat(m * n, 1);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) flat(i * n + j, 0) = grad_scores(i, j);
  const Matrix dp = nn::mlp_backward(grads, head, tape.mlp, flat);
  out.prev = Matrix::Zero(m, d);
  out.cur = Matrix::Zero(n, d);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      const Index row = i * n + j;
      const auto a = tape.pairs.row(row).segment(0, d);
      const auto b = tape.pairs.row(row).segment(d, d);
      // d|a-b|/da = sign(a-b); zero at the kink
      const Eigen::RowVectorXd sign = (a - b).unaryExpr([](double x) {
        return static_cast<double>((x > 0.0) - (x < 0.0));
      });
      const Eigen::RowVectorXd dabs = dp.row(row).segment(2 * d, d).cwiseProduct(sign);
      out.prev.row(i) += dp.row(row).segment(0, d) + dabs;
      out.cur.row(j) += dp.row(row).segment(d, d) - dabs;
    }
  }
  return out;
}

Vector head_logits(const ParamStore& store, const nn::Mlp& head, const Matrix& feats,
                   nn::MlpTape* tape) {
  if (feats.rows() == 0) return Vector(0);
  return nn::mlp_forward(store, head, feats, tape).col(0);
}

Matrix head_backward(ParamStore& grads, const nn::Mlp& head, const nn::MlpTape& tape,
                     const Vector& grad_logits) {
  if (grad_logits.size() == 0) return Matrix(0, head.in_dim(grads));
  return nn::mlp_backward(grads, head, tape, Matrix(grad_logits));
}

StartEnd estimate_start_end(const ParamStore& store, const EstimatorHeads& heads,
                            const Matrix& feats) {
  StartEnd out;
  out.new_score = nn::sigmoid(Matrix(head_logits(store, heads.new_head, feats))).col(0);
  out.end_score = nn::sigmoid(Matrix(head_logits(store, heads.end_head, feats))).col(0);
  return out;
}

Vector estimate_confidence(const ParamStore& store, const EstimatorHeads& heads,
                           const Matrix& feats) {
  return nn::sigmoid(Matrix(head_logits(store, heads.confidence, feats))).col(0);
}

// ---- tracklets ----

std::vector<std::size_t> TrackletStore::active() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < tracklets_.size(); ++t)
    if (tracklets_[t].state == TrackState::active) out.push_back(t);
  return out;
}

Matrix TrackletStore::active_features(Index width) const {
  const auto ids = active();
  Matrix f(static_cast<Index>(ids.size()), width);
  for (std::size_t r = 0; r < ids.size(); ++r) f.row(static_cast<Index>(r)) = tracklets_[ids[r]].last_feature.transpose();
  return f;
}

Tracklet& TrackletStore::spawn() {
  Tracklet t;
  t.id = next_id_++;
  tracklets_.push_back(std::move(t));
  return tracklets_.back();
}

std::vector<LabeledBox> birth_death_update(const Assignment& assignment, TrackletStore& store,
                                           int frame, const std::vector<LabeledBox>& detections,
                                           const Matrix& features, int max_age,
                                           const Vector& end_scores, double end_threshold) {
  const auto active = store.active();
  std::vector<LabeledBox> emitted;
  auto emit = [&](Tracklet& t, Index j) {
    LabeledBox box = detections.at(static_cast<std::size_t>(j));
    box.frame = frame;
    box.track_id = t.id;
    if (!t.boxes.empty() && t.boxes.back().frame >= frame) {
      throw std::logic_error("tracklet " + std::to_string(t.id) + " already has a box at frame " +
                             std::to_string(frame));
    }
    t.boxes.push_back(box);
    t.last_feature = features.row(j).transpose();
    t.last_frame = frame;
    t.misses = 0;
    emitted.push_back(std::move(box));
  };

  for (const auto& [i, j] : assignment.links) {
    if (i < 0 || static_cast<std::size_t>(i) >= active.size()) {
      throw std::logic_error("assignment links to tracklet row " + std::to_string(i) +
                             " which is not active");
    }
    Tracklet& t = store.at(active[static_cast<std::size_t>(i)]);
    if (t.state == TrackState::ended) {
      throw std::logic_error("assignment links to ended tracklet " + std::to_string(t.id));
    }
    emit(t, j);
  }
  for (Index i : assignment.deaths) {
    Tracklet& t = store.at(active.at(static_cast<std::size_t>(i)));
    ++t.misses;
    const bool explicit_end = end_scores.size() > i && end_scores(i) >= end_threshold;
    if (explicit_end || t.misses > max_age) t.state = TrackState::ended;
  }
  for (Index j : assignment.births) emit(store.spawn(), j);
  return emitted;
}

}  // namespace fusiontrack::association
