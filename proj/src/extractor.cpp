#include "fusiontrack/model.hpp"

namespace fusiontrack {

namespace {

Matrix avg_pool(const Matrix& x, int side) {
  const int half = side / 2;
  Matrix out = Matrix::Zero(static_cast<Index>(half) * half, x.cols());
  for (int y = 0; y < half * 2; ++y)
    for (int xx = 0; xx < half * 2; ++xx)
      out.row(static_cast<Index>(y / 2) * half + xx / 2) += 0.25 * x.row(static_cast<Index>(y) * side + xx);
  return out;
}

Matrix avg_pool_backward(const Matrix& grad, int side) {
  const int half = side / 2;
  Matrix out = Matrix::Zero(static_cast<Index>(side) * side, grad.cols());
  for (int y = 0; y < half * 2; ++y)
    for (int xx = 0; xx < half * 2; ++xx)
      out.row(static_cast<Index>(y) * side + xx) = 0.25 * grad.row(static_cast<Index>(y / 2) * half + xx / 2);
  return out;
}

Matrix gather(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
  return out;
}

std::array<Matrix, kLevels> point_positions(const DetectionInput& input) {
  std::array<Matrix, kLevels> pos;
  pos[0] = input.point_uv;
  for (int l = 1; l < kLevels; ++l)
    pos[static_cast<std::size_t>(l)] = gather(pos[static_cast<std::size_t>(l - 1)], input.keep[static_cast<std::size_t>(l)]);
  return pos;
}

}  // namespace

DetectionFeatures extract(const Model& model, const DetectionInput& input, ExtractionTape* tape) {
  const ModelConfig& cfg = model.config;
  const auto& store = model.store;
  const bool has_image = cfg.modality != Modality::lidar;
  const bool has_points = cfg.modality != Modality::image && input.points() > 0;
  const Index quarter = cfg.width() / kLevels;

  ExtractionTape local;
  ExtractionTape& t = tape ? *tape : local;
  t.has_image = has_image;
  t.has_points = has_points;
  t.fused = false;
  t.keep = input.keep;

  const auto pts_pos = has_points ? point_positions(input) : std::array<Matrix, kLevels>{};
  DetectionFeatures out;
  if (has_image) out.camera = Vector::Zero(cfg.width());

  for (int l = 0; l < kLevels; ++l) {
    LevelTape& lt = t.levels[static_cast<std::size_t>(l)];
    const auto ls = static_cast<std::size_t>(l);
    lt.interacted = false;
    if (has_image) {
      lt.pix_in = l == 0 ? input.patch : avg_pool(t.levels[ls - 1].pix_out, cfg.grid_at(l - 1));
      lt.pix_feat = nn::mlp_forward(store, model.image.level[ls], lt.pix_in, &lt.img_mlp);
    }
    if (has_points) {
      lt.pts_in = l == 0 ? input.point_raw : gather(t.levels[ls - 1].pts_out, input.keep[ls]);
      lt.pts_feat = nn::mlp_forward(store, model.points.level[ls], lt.pts_in, &lt.pc_mlp);
    }
    if (has_image && has_points && cfg.interact[ls]) {
      const Matrix pix_pos = grid_positions(cfg.grid_at(l), cfg.patch_size);
      const auto& params = model.fuse[ls];
      lt.pix_out = fusion::interact(store, params.pixels_centered, pix_pos, lt.pix_feat, pts_pos[ls],
                                    lt.pts_feat, cfg.k_pixels, cfg.r_pixels, &lt.pixels_tape);
      lt.pts_out = fusion::interact(store, params.points_centered, pts_pos[ls], lt.pts_feat, pix_pos,
                                    lt.pix_out, cfg.k_points, cfg.r_points, &lt.points_tape);
      lt.interacted = true;
    } else {
      lt.pix_out = lt.pix_feat;
      lt.pts_out = lt.pts_feat;
    }
    if (has_image) {
      lt.pooled = lt.pix_out.colwise().mean().transpose();
      const Matrix skip = nn::dense_forward(store, model.image.skip[ls], lt.pooled.transpose());
      out.camera.segment(l * quarter, quarter) = skip.row(0).transpose();
    }
  }

  if (cfg.modality != Modality::image) {
    out.lidar = Vector::Zero(cfg.width());
    t.argmax.clear();
    if (has_points) {
      const Matrix& last = t.levels[kLevels - 1].pts_out;
      t.argmax.assign(static_cast<std::size_t>(last.cols()), 0);
      for (Index c = 0; c < last.cols(); ++c) {
        Index best = 0;
        for (Index r = 1; r < last.rows(); ++r)
          if (last(r, c) > last(best, c)) best = r;
        t.argmax[static_cast<std::size_t>(c)] = best;
        out.lidar(c) = last(best, c);
      }
    } else {
      out.lidar_empty = true;
    }
  }

  if (cfg.modality == Modality::fused) {
    const Matrix f = fusion::final_fuse(store, model.gate, out.camera.transpose(), out.lidar.transpose(),
                                        &t.final_tape);
    out.fused = f.row(0).transpose();
    t.fused = true;
  }
  return out;
}

void extract_backward(nn::ParamStore& grads, const Model& model, const ExtractionTape& t,
                      const Vector& d_camera, const Vector& d_lidar, const Vector& d_fused) {
  const ModelConfig& cfg = model.config;
  const Index width = cfg.width();
  const Index quarter = width / kLevels;
  Vector dcam = d_camera.size() ? d_camera : Vector::Zero(width);
  Vector dlid = d_lidar.size() ? d_lidar : Vector::Zero(width);
  if (t.fused && d_fused.size()) {
    const fusion::BlendGrad bg = fusion::final_fuse_backward(grads, model.gate, t.final_tape, d_fused.transpose());
    dcam += bg.a.row(0).transpose();
    dlid += bg.b.row(0).transpose();
  }

  Matrix d_pix_out;
  Matrix d_pts_out;
  if (t.has_points) {
    const Matrix& last = t.levels[kLevels - 1].pts_out;
    d_pts_out = Matrix::Zero(last.rows(), last.cols());
    for (Index c = 0; c < last.cols(); ++c) d_pts_out(t.argmax[static_cast<std::size_t>(c)], c) += dlid(c);
  }
  for (int l = kLevels - 1; l >= 0; --l) {
    const auto ls = static_cast<std::size_t>(l);
    const LevelTape& lt = t.levels[ls];
    if (t.has_image) {
      if (d_pix_out.size() == 0) d_pix_out = Matrix::Zero(lt.pix_out.rows(), lt.pix_out.cols());
      const Matrix pooled = lt.pooled.transpose();
      const Matrix skip_out = nn::dense_forward(model.store, model.image.skip[ls], pooled);
      const Matrix d_pooled = nn::dense_backward(grads, model.image.skip[ls], pooled, skip_out,
                                                 dcam.segment(l * quarter, quarter).transpose());
      d_pix_out.rowwise() += d_pooled.row(0) / static_cast<double>(lt.pix_out.rows());
    }
    Matrix d_pix_feat = d_pix_out;
    Matrix d_pts_feat = d_pts_out;
    if (lt.interacted) {
      const auto& params = model.fuse[ls];
      const fusion::InteractionGrad gp = fusion::interact_backward(grads, params.points_centered, lt.points_tape, d_pts_out);
      d_pts_feat = gp.centers;
      const Matrix d_pix_total = d_pix_out + gp.neighbors;
      const fusion::InteractionGrad gx = fusion::interact_backward(grads, params.pixels_centered, lt.pixels_tape, d_pix_total);
      d_pix_feat = gx.centers;
      d_pts_feat += gx.neighbors;
    }
    if (t.has_image) {
      const Matrix d_in = nn::mlp_backward(grads, model.image.level[ls], lt.img_mlp, d_pix_feat);
      d_pix_out = l > 0 ? avg_pool_backward(d_in, cfg.grid_at(l - 1)) : Matrix();
    }
    if (t.has_points) {
      const Matrix d_in = nn::mlp_backward(grads, model.points.level[ls], lt.pc_mlp, d_pts_feat);
      if (l > 0) {
        const Matrix& prev = t.levels[ls - 1].pts_out;
        d_pts_out = Matrix::Zero(prev.rows(), prev.cols());
        const auto& keep = t.keep[ls];
        for (std::size_t r = 0; r < keep.size(); ++r) d_pts_out.row(keep[r]) += d_in.row(static_cast<Index>(r));
      }
    }
  }
}

std::vector<AttentionRow> attention_rows(const ExtractionTape& tape) {
  std::vector<AttentionRow> rows;
  for (int l = 0; l < kLevels; ++l) {
    const LevelTape& lt = tape.levels[static_cast<std::size_t>(l)];
    if (!lt.interacted) continue;
    for (const auto& r : fusion::attention_weights(lt.pixels_tape)) rows.push_back({l, "pixels", r.center, r.neighbor, r.weight});
    for (const auto& r : fusion::attention_weights(lt.points_tape)) rows.push_back({l, "points", r.center, r.neighbor, r.weight});
  }
  return rows;
}

}  // namespace fusiontrack
