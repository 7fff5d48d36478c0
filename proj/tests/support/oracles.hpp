#pragma once

// Independent reference implementations and random generators shared by the
// unit tests and the acceptance binary. Nothing here calls into the code it checks.

#include "fusiontrack/association.hpp"
#include "fusiontrack/fusion.hpp"
#include "fusiontrack/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }
  Matrix matrix(Index r, Index c, double lo, double hi) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }
  // integer grid coordinates produce plenty of distance ties
  Matrix lattice(Index r, int side) {
    Matrix m(r, 2);
    for (Index i = 0; i < r; ++i) m.row(i) << integer(0, side), integer(0, side);
    return m;
  }
};

// O(n log n) scan: sort by (squared distance, index), keep those within radius.
inline std::vector<Index> knn(const Eigen::Vector2d& c, const Matrix& cand, int k, double r) {
  std::vector<std::pair<double, Index>> d;
  for (Index i = 0; i < cand.rows(); ++i) {
    const double dx = cand(i, 0) - c.x(), dy = cand(i, 1) - c.y();
    const double sq = dx * dx + dy * dy;
    if (sq <= r * r) d.emplace_back(sq, i);
  }
  std::sort(d.begin(), d.end());
  std::vector<Index> out;
  for (std::size_t i = 0; i < d.size() && static_cast<int>(i) < k; ++i) out.push_back(d[i].second);
  return out;
}

inline std::vector<Index> retained(const fusiontrack::fusion::NeighborGroup& g) {
  std::vector<Index> out;
  for (std::size_t s = 0; s < g.neighbor_indices.size(); ++s)
    if (g.mask[s]) out.push_back(g.neighbor_indices[s]);
  return out;
}

// Sets every tensor of a store to zero: gating MLPs then emit sigmoid(0) = 1/2.
inline void zero_params(fusiontrack::nn::ParamStore& s) {
  for (std::size_t id = 0; id < s.size(); ++id) s.value(id).setZero();
}

// Largest amount by which x leaves the elementwise [min, max] hull of the rows of `hull`.
inline double hull_violation(const Eigen::RowVectorXd& x, const Matrix& hull) {
  const Eigen::RowVectorXd lo = hull.colwise().minCoeff();
  const Eigen::RowVectorXd hi = hull.colwise().maxCoeff();
  return std::max((lo - x).maxCoeff(), (x - hi).maxCoeff());
}

// ---- association ----------------------------------------------------------

// Exhaustive enumeration of partial matchings, independent of the library's
// own brute-force routine. Each tracklet takes a distinct detection or ends;
// unmatched detections start new tracks. Returns the best objective.
inline double best_objective(const Matrix& s, const Vector& new_logit, const Vector& end_logit) {
  const Index m = s.rows(), n = s.cols();
  std::vector<Index> choice(static_cast<std::size_t>(m), -1);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  double best = -std::numeric_limits<double>::infinity();
  auto value = [&] {
    double v = 0.0;
    for (Index i = 0; i < m; ++i) {
      const Index j = choice[static_cast<std::size_t>(i)];
      v += j < 0 ? end_logit(i) : s(i, j);
    }
    for (Index j = 0; j < n; ++j)
      if (!used[static_cast<std::size_t>(j)]) v += new_logit(j);
    return v;
  };
  auto rec = [&](auto&& self, Index i) -> void {
    if (i == m) {
      best = std::max(best, value());
      return;
    }
    choice[static_cast<std::size_t>(i)] = -1;
    self(self, i + 1);
    for (Index j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      choice[static_cast<std::size_t>(i)] = j;
      self(self, i + 1);
      used[static_cast<std::size_t>(j)] = false;
    }
    choice[static_cast<std::size_t>(i)] = -1;
  };
  rec(rec, 0);
  return best;
}

// Dense two-phase simplex (Bland's rule) for max c^T x, A x = b, 0 <= x <= 1
// handled by adding explicit slack rows for the upper bounds. Returns the
// optimal x; small sizes only.
struct LpResult {
  bool feasible = false;
  Vector x;
  double value = 0.0;
};

inline LpResult simplex_max(const Matrix& A_eq, const Vector& b_eq, const Vector& c) {
  const Index n = A_eq.cols(), me = A_eq.rows();
  // variables: x (n), upper-bound slacks (n), artificials (me + n)
  const Index rows = me + n;
  const Index cols = 2 * n + rows;
  Matrix T = Matrix::Zero(rows, cols + 1);
  for (Index i = 0; i < me; ++i) {
    T.row(i).head(n) = A_eq.row(i);
    T(i, cols) = b_eq(i);
  }
  for (Index i = 0; i < n; ++i) {
    T(me + i, i) = 1.0;
    T(me + i, n + i) = 1.0;
    T(me + i, cols) = 1.0;
  }
  for (Index i = 0; i < rows; ++i) {
    if (T(i, cols) < 0) T.row(i) *= -1.0;
    T(i, 2 * n + i) = 1.0;
  }
  std::vector<Index> basis(static_cast<std::size_t>(rows));
  std::iota(basis.begin(), basis.end(), 2 * n);
  constexpr double eps = 1e-9;

  auto run = [&](Vector cost, Index usable) {
    // maximize cost^T z over current tableau
    for (int iter = 0; iter < 10000; ++iter) {
      Vector red = cost.head(cols);
      for (Index i = 0; i < rows; ++i) red -= cost(basis[static_cast<std::size_t>(i)]) * T.row(i).head(cols).transpose();
      Index enter = -1;
      for (Index j = 0; j < usable; ++j)
        if (red(j) > eps) {
          enter = j;
          break;
        }
      if (enter < 0) return true;
      Index leave = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < rows; ++i) {
        if (T(i, enter) > eps) {
          const double r = T(i, cols) / T(i, enter);
          if (r < ratio - eps || (std::abs(r - ratio) <= eps && leave >= 0 &&
                                  basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
            ratio = r;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;
      T.row(leave) /= T(leave, enter);
      for (Index i = 0; i < rows; ++i)
        if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
      basis[static_cast<std::size_t>(leave)] = enter;
    }
    return false;
  };

  Vector phase1 = Vector::Zero(cols);
  phase1.tail(rows).setConstant(-1.0);
  run(phase1, cols);
  double infeasibility = 0.0;
  for (Index i = 0; i < rows; ++i)
    if (basis[static_cast<std::size_t>(i)] >= 2 * n) infeasibility += T(i, cols);
  LpResult out;
  if (infeasibility > 1e-7) return out;
  // drive remaining zero-level artificials out of the basis where possible
  for (Index i = 0; i < rows; ++i) {
    if (basis[static_cast<std::size_t>(i)] < 2 * n) continue;
    for (Index j = 0; j < 2 * n; ++j) {
      if (std::abs(T(i, j)) > eps) {
        T.row(i) /= T(i, j);
        for (Index r = 0; r < rows; ++r)
          if (r != i && T(r, j) != 0.0) T.row(r) -= T(r, j) * T.row(i);
        basis[static_cast<std::size_t>(i)] = j;
        break;
      }
    }
  }
  Vector phase2 = Vector::Zero(cols);
  phase2.head(n) = c;
  if (!run(phase2, 2 * n)) return out;
  out.feasible = true;
  out.x = Vector::Zero(n);
  for (Index i = 0; i < rows; ++i)
    if (basis[static_cast<std::size_t>(i)] < n) out.x(basis[static_cast<std::size_t>(i)]) = T(i, cols);
  out.value = c.dot(out.x);
  return out;
}

}  // namespace oracle
