#include "fusiontrack/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fusiontrack::fusion {

namespace {

void check_mask(const std::vector<bool>& mask, Index rows, const char* where) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != rows) {
    throw nn::ShapeError(std::string(where) + ": mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(rows) + " rows");
  }
}

bool retained(const std::vector<bool>& mask, Index r) {
  return mask.empty() || mask[static_cast<std::size_t>(r)];
}

Matrix gated_blend(const ParamStore& store, const nn::Mlp& mlp_a, const nn::Mlp& mlp_b,
                   const Matrix& a, const Matrix& b, const std::vector<bool>& mask,
                   GatedBlendTape* tape, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw nn::ShapeError(std::string(where) + ": operands are " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  check_mask(mask, a.rows(), where);
  nn::MlpTape* ta = tape ? &tape->tape_a : nullptr;
  nn::MlpTape* tb = tape ? &tape->tape_b : nullptr;
  Matrix w_a = nn::sigmoid(nn::mlp_forward(store, mlp_a, a, ta));
  Matrix w_b = nn::sigmoid(nn::mlp_forward(store, mlp_b, b, tb));
  Matrix out = (a.cwiseProduct(w_a) + b.cwiseProduct(w_b)).cwiseQuotient(w_a + w_b);
  if (tape) tape->blended = out;
  for (Index r = 0; r < out.rows(); ++r)
    if (!retained(mask, r)) out.row(r).setZero();
  if (tape) {
    tape->a = a;
    tape->b = b;
    tape->w_a = std::move(w_a);
    tape->w_b = std::move(w_b);
    tape->mask = mask;
  }
  return out;
}

BlendGrad gated_blend_backward(ParamStore& grads, const nn::Mlp& mlp_a, const nn::Mlp& mlp_b,
                               const GatedBlendTape& tape, const Matrix& grad) {
  Matrix g = grad;
  for (Index r = 0; r < g.rows(); ++r)
    if (!retained(tape.mask, r)) g.row(r).setZero();
  const Matrix sum = tape.w_a + tape.w_b;
  const Matrix scaled = g.cwiseQuotient(sum);
  BlendGrad out;
  out.a = scaled.cwiseProduct(tape.w_a);
  out.b = scaled.cwiseProduct(tape.w_b);
  const Matrix dw_a = scaled.cwiseProduct(tape.a - tape.blended);
  const Matrix dw_b = scaled.cwiseProduct(tape.b - tape.blended);
  const Matrix dz_a = dw_a.array() * tape.w_a.array() * (1.0 - tape.w_a.array());
  const Matrix dz_b = dw_b.array() * tape.w_b.array() * (1.0 - tape.w_b.array());
  out.a += nn::mlp_backward(grads, mlp_a, tape.tape_a, dz_a);
  out.b += nn::mlp_backward(grads, mlp_b, tape.tape_b, dz_b);
  return out;
}

}  // namespace

DirectionParams add_direction_params(ParamStore& store, const std::string& name, Index channels,
                                     std::uint64_t seed) {
  using nn::Activation;
  const Index d = channels;
  const std::vector<Index> weight_dims{d, d, d};
  const std::vector<Index> attention_dims{2 * d, d, d};
  DirectionParams p;
  p.center_weight = nn::add_mlp(store, name + ".center_weight", weight_dims, Activation::relu,
                                Activation::identity, seed);
  p.neighbor_weight = nn::add_mlp(store, name + ".neighbor_weight", weight_dims,
                                  Activation::relu, Activation::identity, seed);
  p.position_fc = nn::add_dense(store, name + ".position_fc", kPositionWidth, d,
                                Activation::identity, seed);
  p.attention = nn::add_mlp(store, name + ".attention", attention_dims, Activation::relu,
                            Activation::identity, seed);
  return p;
}

GateParams add_gate_params(ParamStore& store, const std::string& name, Index width,
                           std::uint64_t seed) {
  using nn::Activation;
  const std::vector<Index> dims{width, width, width};
  GateParams g;
  g.camera = nn::add_mlp(store, name + ".camera", dims, Activation::relu, Activation::identity, seed);
  g.lidar = nn::add_mlp(store, name + ".lidar", dims, Activation::relu, Activation::identity, seed);
  return g;
}

Matrix fuse_first_stage(const ParamStore& store, const DirectionParams& params,
                        const Matrix& f_center, const Matrix& f_neighbor,
                        const std::vector<bool>& mask, GatedBlendTape* tape) {
  return gated_blend(store, params.center_weight, params.neighbor_weight, f_center, f_neighbor,
                     mask, tape, "fuse_first_stage");
}

BlendGrad fuse_first_stage_backward(ParamStore& grads, const DirectionParams& params,
                                    const GatedBlendTape& tape, const Matrix& grad_fused) {
  return gated_blend_backward(grads, params.center_weight, params.neighbor_weight, tape,
                              grad_fused);
}

Matrix fuse_second_stage(const ParamStore& store, const DirectionParams& params, const Matrix& g,
                         const Matrix& u, const std::vector<Index>& offsets,
                         const std::vector<bool>& mask, SecondStageTape* tape) {
  if (u.rows() != g.rows() || u.cols() != kPositionWidth) {
    throw nn::ShapeError("fuse_second_stage: position rows must be " +
                         std::to_string(g.rows()) + "x7");
  }
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != g.rows()) {
    throw nn::ShapeError("fuse_second_stage: segment offsets do not cover the rows");
  }
  check_mask(mask, g.rows(), "fuse_second_stage");

  const Index d = g.cols();
  Matrix v = nn::dense_forward(store, params.position_fc, u);
  if (v.cols() != d) throw nn::ShapeError("fuse_second_stage: position FC width != feature width");
  Matrix h(g.rows(), 2 * d);
  h << g, v;
  nn::MlpTape* att_tape = tape ? &tape->attention_tape : nullptr;
  const Matrix z = nn::mlp_forward(store, params.attention, h, att_tape);

  const auto segments = static_cast<Index>(offsets.size()) - 1;
  Matrix weights = Matrix::Zero(g.rows(), d);
  Matrix out = Matrix::Zero(segments, d);
  bool empty_segment = false;
#pragma omp parallel for schedule(static) if (segments > 16) reduction(|| : empty_segment)
  for (Index s = 0; s < segments; ++s) {
    const Index begin = offsets[static_cast<std::size_t>(s)];
    const Index end = offsets[static_cast<std::size_t>(s) + 1];
    for (Index c = 0; c < d; ++c) {
      double peak = -std::numeric_limits<double>::infinity();
      for (Index r = begin; r < end; ++r)
        if (retained(mask, r)) peak = std::max(peak, z(r, c));
      if (peak == -std::numeric_limits<double>::infinity()) {
        empty_segment = true;
        break;
      }
      double total = 0.0;
      for (Index r = begin; r < end; ++r) {
        if (!retained(mask, r)) continue;
        weights(r, c) = std::exp(z(r, c) - peak);
        total += weights(r, c);
      }
      double acc = 0.0;
      for (Index r = begin; r < end; ++r) {
        if (!retained(mask, r)) continue;
        weights(r, c) /= total;
        acc += g(r, c) * weights(r, c);
      }
      out(s, c) = acc;
    }
  }
  if (empty_segment) {
    throw std::invalid_argument("fuse_second_stage: a group has no retained neighbor");
  }
  if (tape) {
    tape->g = g;
    tape->u = u;
    tape->v = std::move(v);
    tape->weights = std::move(weights);
    tape->offsets = offsets;
    tape->mask = mask;
  }
  return out;
}

Matrix fuse_second_stage_backward(ParamStore& grads, const DirectionParams& params,
                                  const SecondStageTape& tape, const Matrix& grad_out) {
  const Index d = tape.g.cols();
  const auto segments = static_cast<Index>(tape.offsets.size()) - 1;
  Matrix dg = Matrix::Zero(tape.g.rows(), d);
  Matrix dz = Matrix::Zero(tape.g.rows(), d);
#pragma omp parallel for schedule(static) if (segments > 16)
  for (Index s = 0; s < segments; ++s) {
    const Index begin = tape.offsets[static_cast<std::size_t>(s)];
    const Index end = tape.offsets[static_cast<std::size_t>(s) + 1];
    for (Index c = 0; c < d; ++c) {
      const double ge = grad_out(s, c);
      double dot = 0.0;
      for (Index r = begin; r < end; ++r) {
        if (!retained(tape.mask, r)) continue;
        dg(r, c) = ge * tape.weights(r, c);
        dot += tape.weights(r, c) * ge * tape.g(r, c);
      }
      for (Index r = begin; r < end; ++r) {
        if (!retained(tape.mask, r)) continue;
        dz(r, c) = tape.weights(r, c) * (ge * tape.g(r, c) - dot);
      }
    }
  }
  const Matrix dh = nn::mlp_backward(grads, params.attention, tape.attention_tape, dz);
  dg += dh.leftCols(d);
  const Matrix dv = dh.rightCols(d);
  // positions are inputs, not learned: only the FC parameters need gradients
  nn::dense_backward(grads, params.position_fc, tape.u, tape.v, dv);
  return dg;
}

Vector fuse_second_stage(const ParamStore& store, const DirectionParams& params, const Matrix& g,
                         const Matrix& u, const std::vector<bool>& mask) {
  const std::vector<Index> offsets{0, g.rows()};
  return fuse_second_stage(store, params, g, u, offsets, mask).row(0).transpose();
}

Matrix interact(const ParamStore& store, const DirectionParams& params, const Matrix& center_pos,
                const Matrix& center_feat, const Matrix& neighbor_pos, const Matrix& neighbor_feat,
                int k, double radius, InteractionTape* tape) {
  if (center_pos.rows() != center_feat.rows() || neighbor_pos.rows() != neighbor_feat.rows()) {
    throw nn::ShapeError("interact: positions and features disagree in length");
  }
  if (neighbor_feat.rows() > 0 && center_feat.rows() > 0 &&
      neighbor_feat.cols() != center_feat.cols()) {
    throw nn::ShapeError("interact: modalities have different channel widths");
  }
  InteractionTape local;
  InteractionTape& t = tape ? *tape : local;
  t = InteractionTape{};
  t.centers = center_feat.rows();
  t.neighbors = neighbor_feat.rows();
  if (center_feat.rows() == 0 || neighbor_feat.rows() == 0) {
    t.groups.resize(static_cast<std::size_t>(center_feat.rows()));
    return center_feat;
  }

  t.groups = group_all(center_pos, neighbor_pos, k, radius);
  std::vector<Index> offsets{0};
  for (const auto& group : t.groups) {
    const int n = group.count();
    if (n == 0) continue;
    t.active.push_back(group.center_index);
    offsets.push_back(offsets.back() + n);
  }
  if (t.active.empty()) return center_feat;

  const Index rows = offsets.back();
  const Index d = center_feat.cols();
  Matrix fc(rows, d);
  Matrix fn(rows, d);
  Matrix u(rows, kPositionWidth);
  t.row_neighbor.resize(static_cast<std::size_t>(rows));
  const auto active = static_cast<Index>(t.active.size());
#pragma omp parallel for schedule(static) if (active > 16)
  for (Index a = 0; a < active; ++a) {
    const Index c = t.active[static_cast<std::size_t>(a)];
    const auto& group = t.groups[static_cast<std::size_t>(c)];
    Index r = offsets[static_cast<std::size_t>(a)];
    const Eigen::Vector2d x = center_pos.row(c).transpose();
    for (std::size_t s = 0; s < group.neighbor_indices.size(); ++s) {
      if (!group.mask[s]) continue;
      const Index j = group.neighbor_indices[s];
      fc.row(r) = center_feat.row(c);
      fn.row(r) = neighbor_feat.row(j);
      u.row(r) = encode_position(x, neighbor_pos.row(j).transpose());
      t.row_neighbor[static_cast<std::size_t>(r)] = j;
      ++r;
    }
  }

  const Matrix g = fuse_first_stage(store, params, fc, fn, {}, tape ? &t.first : nullptr);
  const Matrix e = fuse_second_stage(store, params, g, u, offsets, {}, tape ? &t.second : nullptr);
  Matrix out = center_feat;
  for (Index a = 0; a < active; ++a) out.row(t.active[static_cast<std::size_t>(a)]) = e.row(a);
  return out;
}

InteractionGrad interact_backward(ParamStore& grads, const DirectionParams& params,
                                  const InteractionTape& tape, const Matrix& grad_out) {
  InteractionGrad out;
  out.centers = grad_out;
  out.neighbors = Matrix::Zero(tape.neighbors, grad_out.cols());
  if (tape.active.empty()) return out;

  const auto active = static_cast<Index>(tape.active.size());
  Matrix ge(active, grad_out.cols());
  for (Index a = 0; a < active; ++a) {
    const Index c = tape.active[static_cast<std::size_t>(a)];
    ge.row(a) = grad_out.row(c);
    out.centers.row(c).setZero();
  }
  const Matrix dg = fuse_second_stage_backward(grads, params, tape.second, ge);
  const BlendGrad bg = fuse_first_stage_backward(grads, params, tape.first, dg);
  const auto& offsets = tape.second.offsets;
  for (Index a = 0; a < active; ++a) {
    const Index c = tape.active[static_cast<std::size_t>(a)];
    for (Index r = offsets[static_cast<std::size_t>(a)]; r < offsets[static_cast<std::size_t>(a) + 1]; ++r) {
      out.centers.row(c) += bg.a.row(r);
      out.neighbors.row(tape.row_neighbor[static_cast<std::size_t>(r)]) += bg.b.row(r);
    }
  }
  return out;
}

PointSet points_centered_update(const ParamStore& store, const DirectionParams& params,
                                const PointSet& points, const PixelGrid& pixels, int k,
                                double radius, InteractionTape* tape) {
  PointSet out = points;
  out.features = interact(store, params, points.positions, points.features, pixels.positions,
                          pixels.features, k, radius, tape);
  return out;
}

PixelGrid pixels_centered_update(const ParamStore& store, const DirectionParams& params,
                                 const PixelGrid& pixels, const PointSet& points, int k,
                                 double radius, InteractionTape* tape) {
  PixelGrid out = pixels;
  out.features = interact(store, params, pixels.positions, pixels.features, points.positions,
                          points.features, k, radius, tape);
  return out;
}

std::vector<AttentionRecord> attention_weights(const InteractionTape& tape) {
  std::vector<AttentionRecord> records;
  const auto& offsets = tape.second.offsets;
  for (std::size_t a = 0; a < tape.active.size(); ++a) {
    for (Index r = offsets[a]; r < offsets[a + 1]; ++r) {
      records.push_back({tape.active[a], tape.row_neighbor[static_cast<std::size_t>(r)],
                         tape.second.weights.row(r).mean()});
    }
  }
  return records;
}

Matrix final_fuse(const ParamStore& store, const GateParams& gate, const Matrix& camera,
                  const Matrix& lidar, GatedBlendTape* tape) {
  return gated_blend(store, gate.camera, gate.lidar, camera, lidar, {}, tape, "final_fuse");
}

BlendGrad final_fuse_backward(ParamStore& grads, const GateParams& gate,
                              const GatedBlendTape& tape, const Matrix& grad_fused) {
  return gated_blend_backward(grads, gate.camera, gate.lidar, tape, grad_fused);
}

}  // namespace fusiontrack::fusion
