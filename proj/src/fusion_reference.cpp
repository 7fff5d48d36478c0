#include "fusiontrack/fusion.hpp"

namespace fusiontrack::fusion::reference {

// One center at a time with K-row masked groups, exactly as the per-group
// operations are defined. No batching, no threads.
Matrix interact(const ParamStore& store, const DirectionParams& params, const Matrix& center_pos,
                const Matrix& center_feat, const Matrix& neighbor_pos, const Matrix& neighbor_feat,
                int k, double radius) {
  Matrix out = center_feat;
  if (neighbor_feat.rows() == 0) return out;
  const Index d = center_feat.cols();
  for (Index c = 0; c < center_feat.rows(); ++c) {
    const Eigen::Vector2d x = center_pos.row(c).transpose();
    const NeighborGroup group = group_neighbors(x, neighbor_pos, k, radius);
    if (group.empty()) continue;

    Matrix f_center = center_feat.row(c).replicate(k, 1);
    Matrix f_neighbor = Matrix::Zero(k, d);
    Matrix u = Matrix::Zero(k, kPositionWidth);
    for (int s = 0; s < k; ++s) {
      if (!group.mask[static_cast<std::size_t>(s)]) continue;
      const Index j = group.neighbor_indices[static_cast<std::size_t>(s)];
      f_neighbor.row(s) = neighbor_feat.row(j);
      u.row(s) = encode_position(x, neighbor_pos.row(j).transpose());
    }
    const Matrix g = fuse_first_stage(store, params, f_center, f_neighbor, group.mask);
    out.row(c) = fuse_second_stage(store, params, g, u, group.mask).transpose();
  }
  return out;
}

PointSet points_centered_update(const ParamStore& store, const DirectionParams& params,
                                const PointSet& points, const PixelGrid& pixels, int k,
                                double radius) {
  PointSet out = points;
  out.features = reference::interact(store, params, points.positions, points.features, pixels.positions,
                          pixels.features, k, radius);
  return out;
}

PixelGrid pixels_centered_update(const ParamStore& store, const DirectionParams& params,
                                 const PixelGrid& pixels, const PointSet& points, int k,
                                 double radius) {
  PixelGrid out = pixels;
  out.features = reference::interact(store, params, pixels.positions, pixels.features, points.positions,
                          points.features, k, radius);
  return out;
}

}  // namespace fusiontrack::fusion::reference
