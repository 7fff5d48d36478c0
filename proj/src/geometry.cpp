#include "fusiontrack/geometry.hpp"

#include <stdexcept>

namespace fusiontrack {

ProjectedPoints project_to_image(const RawPointCloud& cloud, const CalibrationSet& calib) {
  const Eigen::Matrix4d velo_to_rect = calib.rect * calib.velo_to_cam;
  ProjectedPoints out;
  std::vector<Eigen::Vector2d> uv;
  std::vector<double> depth;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector4d x(cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2), 1.0);
    const Eigen::Vector4d cam = velo_to_rect * x;
    if (cam.z() <= 0.0) continue;
    const Eigen::Vector3d p = calib.P * cam;
    if (p.z() <= 0.0) continue;
    uv.emplace_back(p.x() / p.z(), p.y() / p.z());
    depth.push_back(cam.z());
    out.source_index.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(uv.size());
  out.uv.resize(n, 2);
  out.depth.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.uv.row(i) = uv[static_cast<std::size_t>(i)].transpose();
    out.depth(i) = depth[static_cast<std::size_t>(i)];
  }
  return out;
}

ProjectedPoints frustum_filter(const ProjectedPoints& proj, const BBox& bbox) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < proj.size(); ++i) {
    const double u = proj.uv(i, 0);
    const double v = proj.uv(i, 1);
    if (u >= bbox.x1 && u <= bbox.x2 && v >= bbox.y1 && v <= bbox.y2) keep.push_back(i);
  }
  ProjectedPoints out;
  const auto n = static_cast<Eigen::Index>(keep.size());
  out.uv.resize(n, 2);
  out.depth.resize(n);
  out.source_index.reserve(keep.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index i = keep[static_cast<std::size_t>(r)];
    out.uv.row(r) = proj.uv.row(i);
    out.depth(r) = proj.depth(i);
    out.source_index.push_back(proj.source_index[static_cast<std::size_t>(i)]);
  }
  return out;
}

MMatrix compute_m_matrix(const BBox& bbox, double width, double height) {
  if (!bbox.valid()) throw std::invalid_argument("M-matrix needs x1 < x2 and y1 < y2");
  if (!(width > 0.0) || !(height > 0.0)) {
    throw std::invalid_argument("M-matrix needs a positive target size");
  }
  const double sx = width / bbox.width();
  const double sy = height / bbox.height();
  MMatrix M;
  M.m << sx, 0.0, -sx * bbox.x1,
         0.0, sy, -sy * bbox.y1,
         0.0, 0.0, 1.0;
  M.source = bbox;
  M.width = width;
  M.height = height;
  return M;
}

Eigen::Vector2d rescale_to_patch(const BBox& bbox, double width, double height,
                                 const Eigen::Vector2d& uv) {
  return {width * ((uv.x() - bbox.x1) / bbox.width()), height * ((uv.y() - bbox.y1) / bbox.height())};
}

Eigen::Vector2d apply_m(const MMatrix& M, const Eigen::Vector2d& uv) {
  if (M.width > 0.0) {
    const BBox& b = M.source;
    if (!M.inverse) return rescale_to_patch(b, M.width, M.height, uv);
    return {b.x1 + b.width() * (uv.x() / M.width), b.y1 + b.height() * (uv.y() / M.height)};
  }
  const Eigen::Vector3d p = M.m * uv.homogeneous();
  return p.head<2>() / p.z();
}

MMatrix invert_m(const MMatrix& M) {
  // Affine with a diagonal linear part, so the inverse is closed form.
  const double sx = M.m(0, 0);
  const double sy = M.m(1, 1);
  MMatrix inv = M;
  inv.m << 1.0 / sx, 0.0, -M.m(0, 2) / sx,
           0.0, 1.0 / sy, -M.m(1, 2) / sy,
           0.0, 0.0, 1.0;
  inv.inverse = !M.inverse;
  return inv;
}

ProjectedPoints calibrate(const ProjectedPoints& proj, const MMatrix& M) {
  ProjectedPoints out = proj;
  for (Eigen::Index i = 0; i < proj.size(); ++i)
    out.uv.row(i) = apply_m(M, proj.uv.row(i).transpose()).transpose();
  return out;
}

}  // namespace fusiontrack
