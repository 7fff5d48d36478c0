#include "fusiontrack/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fusiontrack::fusion {

namespace {

using Candidate = std::pair<double, Index>;  // squared distance, index

NeighborGroup make_group(std::vector<Candidate>& found, int k, double radius) {
  const auto take = std::min<std::size_t>(found.size(), static_cast<std::size_t>(k));
  std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(take), found.end());
  NeighborGroup group;
  group.k = k;
  group.radius = radius;
  group.neighbor_indices.assign(static_cast<std::size_t>(k), -1);
  group.mask.assign(static_cast<std::size_t>(k), false);
  for (std::size_t s = 0; s < take; ++s) {
    group.neighbor_indices[s] = found[s].second;
    group.mask[s] = true;
  }
  return group;
}

double squared_distance(const Eigen::Vector2d& c, const Matrix& pts, Index i) {
  const double dx = pts(i, 0) - c.x();
  const double dy = pts(i, 1) - c.y();
  return dx * dx + dy * dy;
}

}  // namespace

int NeighborGroup::count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), true));
}

NeighborGroup group_neighbors(const Eigen::Vector2d& center, const Matrix& candidates, int k,
                              double radius) {
  const double r2 = radius * radius;
  std::vector<Candidate> found;
  for (Index i = 0; i < candidates.rows(); ++i) {
    const double d2 = squared_distance(center, candidates, i);
    if (d2 <= r2) found.emplace_back(d2, i);
  }
  return make_group(found, k, radius);
}

NeighborGrid::NeighborGrid(const Matrix& candidates, double cell_size)
    : candidates_(candidates), cell_(cell_size > 0.0 ? cell_size : 1.0) {
  const Index n = candidates_.rows();
  if (n > 0) {
    origin_x_ = candidates_.col(0).minCoeff();
    origin_y_ = candidates_.col(1).minCoeff();
    const double ext_x = candidates_.col(0).maxCoeff() - origin_x_;
    const double ext_y = candidates_.col(1).maxCoeff() - origin_y_;
    // cap the table size; a coarser cell only costs extra distance tests
    constexpr double max_cells_per_axis = 1024.0;
    cell_ = std::max({cell_, ext_x / max_cells_per_axis, ext_y / max_cells_per_axis});
    nx_ = static_cast<Index>(ext_x / cell_) + 1;
    ny_ = static_cast<Index>(ext_y / cell_) + 1;
  }
  std::vector<Index> counts(static_cast<std::size_t>(nx_ * ny_) + 1, 0);
  std::vector<Index> cell_of(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index cx = cell_coord(candidates_(i, 0), origin_x_, nx_);
    const Index cy = cell_coord(candidates_(i, 1), origin_y_, ny_);
    cell_of[static_cast<std::size_t>(i)] = cy * nx_ + cx;
    ++counts[static_cast<std::size_t>(cy * nx_ + cx) + 1];
  }
  for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
  cell_start_ = counts;
  cell_items_.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& slot = counts[static_cast<std::size_t>(cell_of[static_cast<std::size_t>(i)])];
    cell_items_[static_cast<std::size_t>(slot++)] = i;
  }
}

Index NeighborGrid::cell_coord(double v, double origin, Index n) const {
  const double c = std::floor((v - origin) / cell_);
  if (c < 0.0) return 0;
  if (c >= static_cast<double>(n)) return n - 1;
  return static_cast<Index>(c);
}

NeighborGroup NeighborGrid::query(const Eigen::Vector2d& center, int k, double radius) const {
  std::vector<Candidate> found;
  if (candidates_.rows() > 0) {
    const double r2 = radius * radius;
    const Index x0 = cell_coord(center.x() - radius, origin_x_, nx_);
    const Index x1 = cell_coord(center.x() + radius, origin_x_, nx_);
    const Index y0 = cell_coord(center.y() - radius, origin_y_, ny_);
    const Index y1 = cell_coord(center.y() + radius, origin_y_, ny_);
    for (Index cy = y0; cy <= y1; ++cy) {
      for (Index cx = x0; cx <= x1; ++cx) {
        const auto cell = static_cast<std::size_t>(cy * nx_ + cx);
        for (Index s = cell_start_[cell]; s < cell_start_[cell + 1]; ++s) {
          const Index i = cell_items_[static_cast<std::size_t>(s)];
          const double d2 = squared_distance(center, candidates_, i);
          if (d2 <= r2) found.emplace_back(d2, i);
        }
      }
    }
  }
  return make_group(found, k, radius);
}

std::vector<NeighborGroup> group_all(const Matrix& centers, const Matrix& candidates, int k,
                                     double radius) {
  const NeighborGrid grid(candidates, radius);
  std::vector<NeighborGroup> groups(static_cast<std::size_t>(centers.rows()));
  const Index n = centers.rows();
#pragma omp parallel for schedule(static) if (n > 64)
  for (Index c = 0; c < n; ++c) {
    auto& g = groups[static_cast<std::size_t>(c)];
    g = grid.query(centers.row(c).transpose(), k, radius);
    g.center_index = c;
  }
  return groups;
}

namespace reference {

std::vector<NeighborGroup> group_all(const Matrix& centers, const Matrix& candidates, int k,
                                     double radius) {
  std::vector<NeighborGroup> groups;
  groups.reserve(static_cast<std::size_t>(centers.rows()));
  for (Index c = 0; c < centers.rows(); ++c) {
    groups.push_back(group_neighbors(centers.row(c).transpose(), candidates, k, radius));
    groups.back().center_index = c;
  }
  return groups;
}

}  // namespace reference

Eigen::Matrix<double, 1, kPositionWidth> encode_position(const Eigen::Vector2d& center,
                                                         const Eigen::Vector2d& neighbor) {
  const Eigen::Vector2d d = center - neighbor;
  Eigen::Matrix<double, 1, kPositionWidth> u;
  u << center.x(), center.y(), neighbor.x(), neighbor.y(), d.x(), d.y(), d.norm();
  return u;
}

}  // namespace fusiontrack::fusion
