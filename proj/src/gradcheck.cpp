#include "fusiontrack/gradcheck.hpp"

#include "fusiontrack/association.hpp"
#include "fusiontrack/fusion.hpp"
#include "fusiontrack/model.hpp"

#include <functional>
#include <random>

namespace fusiontrack {

namespace {

using nn::Index;
using nn::Matrix;
using nn::ParamStore;

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  Matrix uniform(Index r, Index c, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = d(gen);
    return m;
  }
};

GradCheckEntry check(const std::string& name, ParamStore& store, const nn::Objective& f, double scale) {
  const nn::GradCheckResult r = nn::grad_check(f, store, kGradCheckEps, scale);
  return {name, r.max_relative_error, r.worst_param, static_cast<long>(r.coordinates), static_cast<long>(r.kinks)};
}

// Zero-initialized biases put dead relu rows exactly on the kink, where a central
// difference is meaningless; checks run at a jittered point with positive biases.
void jitter(ParamStore& store, Rng& rng) {
  for (std::size_t id = 0; id < store.size(); ++id) {
    Matrix& v = store.value(id);
    const bool bias = store.name(id).ends_with(".bias");
    v += bias ? rng.uniform(v.rows(), v.cols(), 0.05, 0.15) : rng.uniform(v.rows(), v.cols(), -0.1, 0.1);
  }
}

double weighted_sum(const Matrix& out, const Matrix& w) { return out.cwiseProduct(w).sum(); }

}  // namespace

bool passed(const GradCheckEntry& e) {
  return e.max_relative_error <= kGradCheckTolerance && e.kinks * 100 <= e.coordinates;
}

std::vector<GradCheckEntry> run_gradient_checks(std::uint64_t seed, double scale) {
  constexpr Index d = 4;
  std::vector<GradCheckEntry> results;
  Rng rng(seed);

  {
    ParamStore store;
    const auto params = fusion::add_direction_params(store, "dir", d, seed);
    jitter(store, rng);
    const Matrix fc = rng.uniform(5, d, -1, 1), fn = rng.uniform(5, d, -1, 1), w = rng.uniform(5, d, -1, 1);
    const std::vector<bool> mask{true, true, false, true, true};
    results.push_back(check("fusion.first_stage", store, [&](ParamStore& s) {
      fusion::GatedBlendTape tape;
      const Matrix out = fusion::fuse_first_stage(s, params, fc, fn, mask, &tape);
      fusion::fuse_first_stage_backward(s, params, tape, w);
      return weighted_sum(out, w);
    }, scale));

    const Matrix g = rng.uniform(6, d, -1, 1), u = rng.uniform(6, fusion::kPositionWidth, -2, 2);
    const Matrix w2 = rng.uniform(2, d, -1, 1);
    const std::vector<Index> offsets{0, 4, 6};
    const std::vector<bool> mask2{true, false, true, true, true, true};
    results.push_back(check("fusion.second_stage", store, [&](ParamStore& s) {
      fusion::SecondStageTape tape;
      const Matrix out = fusion::fuse_second_stage(s, params, g, u, offsets, mask2, &tape);
      fusion::fuse_second_stage_backward(s, params, tape, w2);
      return weighted_sum(out, w2);
    }, scale));
  }

  for (const char* direction : {"points_centered", "pixels_centered"}) {
    ParamStore store;
    const auto params = fusion::add_direction_params(store, direction, d, seed);
    jitter(store, rng);
    const bool points = std::string(direction) == "points_centered";
    const Matrix pts_pos = rng.uniform(7, 2, 0, 8), pix_pos = rng.uniform(9, 2, 0, 8);
    const Matrix pts_f = rng.uniform(7, d, -1, 1), pix_f = rng.uniform(9, d, -1, 1);
    const Matrix& cpos = points ? pts_pos : pix_pos;
    const Matrix& cf = points ? pts_f : pix_f;
    const Matrix& npos = points ? pix_pos : pts_pos;
    const Matrix& nf = points ? pix_f : pts_f;
    const Matrix w = rng.uniform(cf.rows(), d, -1, 1);
    results.push_back(check(std::string("fusion.") + direction, store, [&](ParamStore& s) {
      fusion::InteractionTape tape;
      const Matrix out = fusion::interact(s, params, cpos, cf, npos, nf, 3, 6.0, &tape);
      fusion::interact_backward(s, params, tape, w);
      return weighted_sum(out, w);
    }, scale));
  }

  {
    ParamStore store;
    const auto gate = fusion::add_gate_params(store, "gate", d, seed);
    jitter(store, rng);
    const Matrix cam = rng.uniform(3, d, -1, 1), lid = rng.uniform(3, d, -1, 1), w = rng.uniform(3, d, -1, 1);
    results.push_back(check("fusion.final_fuse", store, [&](ParamStore& s) {
      fusion::GatedBlendTape tape;
      const Matrix out = fusion::final_fuse(s, gate, cam, lid, &tape);
      fusion::final_fuse_backward(s, gate, tape, w);
      return weighted_sum(out, w);
    }, scale));
  }

  {
    ParamStore store;
    const auto heads = association::add_estimator_heads(store, "head", d, seed);
    jitter(store, rng);
    const Matrix prev = rng.uniform(3, d, -1, 1), cur = rng.uniform(4, d, -1, 1), w = rng.uniform(3, 4, -1, 1);
    results.push_back(check("head.affinity", store, [&](ParamStore& s) {
      association::AffinityTape tape;
      const Matrix out = association::estimate_affinity(s, heads.affinity, prev, cur, &tape);
      association::estimate_affinity_backward(s, heads.affinity, tape, w);
      return weighted_sum(out, w);
    }, scale));
    const std::pair<const char*, const nn::Mlp*> scalar_heads[] = {
        {"head.new", &heads.new_head}, {"head.end", &heads.end_head}, {"head.confidence", &heads.confidence}};
    for (const auto& [name, head] : scalar_heads) {
      const Matrix x = rng.uniform(5, d, -1, 1);
      const Matrix w1 = rng.uniform(5, 1, -1, 1);
      results.push_back(check(name, store, [&, head = head](ParamStore& s) {
        nn::MlpTape tape;
        const nn::Vector z = association::head_logits(s, *head, x, &tape);
        association::head_backward(s, *head, tape, w1.col(0));
        return z.dot(w1.col(0));
      }, scale));
    }
  }

  {
    ModelConfig cfg;
    cfg.channels = {4, 4, 8, 8};
    cfg.grid = 8;
    cfg.max_points = 8;
    cfg.k_points = 3;
    cfg.r_points = 24.0;
    cfg.k_pixels = 2;
    cfg.r_pixels = 24.0;
    Model model = make_model(cfg, seed);
    jitter(model.store, rng);
    DetectionInput in;
    in.patch = rng.uniform(64, 27, 0, 1);
    in.point_raw = rng.uniform(8, 4, -1, 1);
    in.point_uv = rng.uniform(8, 2, 0, 32);
    const Matrix xyz = in.point_raw.leftCols(3);
    in.keep[0] = farthest_point_sample(xyz, 8);
    Matrix level = xyz;
    for (int l = 1; l < kLevels; ++l) {
      auto& keep = in.keep[static_cast<std::size_t>(l)];
      keep = farthest_point_sample(level, cfg.points_at(l));
      Matrix next(static_cast<Index>(keep.size()), 3);
      for (std::size_t r = 0; r < keep.size(); ++r) next.row(static_cast<Index>(r)) = level.row(keep[r]);
      level = next;
    }
    const nn::Vector w = rng.uniform(cfg.width(), 1, -1, 1).col(0);
    results.push_back(check("extractor.fused", model.store, [&](ParamStore&) {
      ExtractionTape tape;
      const DetectionFeatures f = extract(model, in, &tape);
      extract_backward(model.store, model, tape, {}, {}, w);
      return f.fused.dot(w);
    }, scale));
  }
  return results;
}

}  // namespace fusiontrack
