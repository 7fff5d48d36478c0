#include "fusiontrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace fusiontrack {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Mean BCE-with-logits over positives plus mean over negatives (a missing
// class contributes nothing). Writes d loss / d logit, times `scale`, into `grad`.
double balanced_bce(const Vector& logits, const std::vector<double>& targets, double scale, Vector& grad) {
  grad = Vector::Zero(logits.size());
  const auto pos = static_cast<double>(std::count(targets.begin(), targets.end(), 1.0));
  const auto neg = static_cast<double>(targets.size()) - pos;
  double loss = 0.0;
  for (Index i = 0; i < logits.size(); ++i) {
    const double y = targets[static_cast<std::size_t>(i)];
    const double weight = scale / (y > 0.5 ? pos : neg);
    loss += weight * (softplus(logits(i)) - y * logits(i));
    grad(i) = weight * (nn::sigmoid(logits(i)) - y);
  }
  return loss;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

void scatter_rows(Matrix& m, const std::vector<Index>& rows, const Matrix& g) {
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(rows[r]) += g.row(static_cast<Index>(r));
}

struct FramePair {
  std::vector<Index> prev_rows, cur_rows;
  std::vector<double> targets;  // row-major over (prev, cur)
};

// Single scalar head trained with balanced BCE on selected rows.
double head_term(Model& model, const nn::Mlp& head, const Matrix& desc, const std::vector<Index>& rows,
                 const std::vector<double>& targets, bool accumulate, Matrix& d_desc) {
  if (rows.empty()) return 0.0;
  const Matrix x = gather_rows(desc, rows);
  nn::MlpTape tape;
  const Vector z = association::head_logits(model.store, head, x, &tape);
  Vector g;
  const double loss = balanced_bce(z, targets, 1.0, g);
  if (accumulate) scatter_rows(d_desc, rows, association::head_backward(model.store, head, tape, g));
  return loss;
}

}  // namespace

double sequence_loss(Model& model, const PreparedSequence& seq, bool accumulate) {
  using namespace association;
  const Modality modality = model.config.modality;
  const Index width = model.config.width();
  const auto& heads = model.heads;

  std::vector<Index> offset{0};
  for (const auto& f : seq.frames) offset.push_back(offset.back() + static_cast<Index>(f.inputs.size()));
  const Index total = offset.back();
  if (total == 0) return 0.0;
  std::vector<ExtractionTape> tapes(static_cast<std::size_t>(accumulate ? total : 0));
  Matrix desc(total, width);
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
#pragma omp parallel for schedule(dynamic)
    for (std::size_t j = 0; j < frame.inputs.size(); ++j) {
      const Index row = offset[f] + static_cast<Index>(j);
      ExtractionTape* tape = accumulate ? &tapes[static_cast<std::size_t>(row)] : nullptr;
      desc.row(row) = descriptor(extract(model, frame.inputs[j], tape), modality).transpose();
    }
  }

  std::vector<Index> all_rows(static_cast<std::size_t>(total));
  std::iota(all_rows.begin(), all_rows.end(), Index{0});
  std::vector<double> is_true;
  std::vector<Index> new_rows, end_rows;
  std::vector<double> new_targets, end_targets;
  std::vector<FramePair> pairs;
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    for (int id : seq.gt_ids[f]) is_true.push_back(id >= 0 ? 1.0 : 0.0);
  for (std::size_t f = 1; f < seq.frames.size(); ++f) {
    FramePair p;
    std::vector<int> prev_ids, cur_ids;
    for (std::size_t j = 0; j < seq.gt_ids[f - 1].size(); ++j)
      if (seq.gt_ids[f - 1][j] >= 0) {
        p.prev_rows.push_back(offset[f - 1] + static_cast<Index>(j));
        prev_ids.push_back(seq.gt_ids[f - 1][j]);
      }
    for (std::size_t j = 0; j < seq.gt_ids[f].size(); ++j)
      if (seq.gt_ids[f][j] >= 0) {
        p.cur_rows.push_back(offset[f] + static_cast<Index>(j));
        cur_ids.push_back(seq.gt_ids[f][j]);
      }
    const std::set<int> prev_set(prev_ids.begin(), prev_ids.end());
    const std::set<int> cur_set(cur_ids.begin(), cur_ids.end());
    for (std::size_t j = 0; j < p.cur_rows.size(); ++j) {
      new_rows.push_back(p.cur_rows[j]);
      new_targets.push_back(prev_set.contains(cur_ids[j]) ? 0.0 : 1.0);
    }
    for (std::size_t i = 0; i < p.prev_rows.size(); ++i) {
      end_rows.push_back(p.prev_rows[i]);
      end_targets.push_back(cur_set.contains(prev_ids[i]) ? 0.0 : 1.0);
    }
    for (int a : prev_ids)
      for (int b : cur_ids) p.targets.push_back(a == b ? 1.0 : 0.0);
    const bool has_pos = std::count(p.targets.begin(), p.targets.end(), 1.0) > 0;
    const bool has_neg = std::count(p.targets.begin(), p.targets.end(), 0.0) > 0;
    if (has_pos && has_neg) pairs.push_back(std::move(p));
  }

  Matrix d_desc = Matrix::Zero(total, width);
  double loss = 0.0;
  loss += head_term(model, heads.confidence, desc, all_rows, is_true, accumulate, d_desc);
  loss += head_term(model, heads.new_head, desc, new_rows, new_targets, accumulate, d_desc);
  loss += head_term(model, heads.end_head, desc, end_rows, end_targets, accumulate, d_desc);

  const double pair_scale = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
  for (const FramePair& p : pairs) {
    AffinityTape tape;
    const Matrix s = estimate_affinity(model.store, heads.affinity, gather_rows(desc, p.prev_rows),
                                       gather_rows(desc, p.cur_rows), &tape);
    Vector flat(s.size());
    for (Index i = 0; i < s.rows(); ++i)
      for (Index j = 0; j < s.cols(); ++j) flat(i * s.cols() + j) = s(i, j);
    Vector g;
    loss += balanced_bce(flat, p.targets, pair_scale, g);
    if (!accumulate) continue;
    Matrix gs(s.rows(), s.cols());
    for (Index i = 0; i < s.rows(); ++i)
      for (Index j = 0; j < s.cols(); ++j) gs(i, j) = g(i * s.cols() + j);
    const AffinityGrad ag = estimate_affinity_backward(model.store, heads.affinity, tape, gs);
    scatter_rows(d_desc, p.prev_rows, ag.prev);
    scatter_rows(d_desc, p.cur_rows, ag.cur);
  }

  if (accumulate) {
    // gradient accumulation into the shared store stays serial
    const Vector none;
    for (Index r = 0; r < total; ++r) {
      const Vector d = d_desc.row(r).transpose();
      const auto& tape = tapes[static_cast<std::size_t>(r)];
      switch (modality) {
        case Modality::image: extract_backward(model.store, model, tape, d, none, none); break;
        case Modality::lidar: extract_backward(model.store, model, tape, none, d, none); break;
        case Modality::fused: extract_backward(model.store, model, tape, none, none, d); break;
      }
    }
  }
  return loss;
}

double dataset_loss(Model& model, const std::vector<PreparedSequence>& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& seq : data) total += sequence_loss(model, seq, false);
  return total / static_cast<double>(data.size());
}

TrainLog train(Model& model, const std::vector<PreparedSequence>& data, const TrainConfig& config) {
  TrainLog log;
  nn::Adam adam(config.learning_rate);
  std::mt19937_64 rng(nn::derive_seed(config.seed, "train.order"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  model.store.zero_grad();
  for (int e = 0; e < config.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t idx : order) {
      sum += sequence_loss(model, data[idx], true);
      adam.step(model.store);
    }
    log.epoch_loss.push_back(data.empty() ? 0.0 : sum / static_cast<double>(data.size()));
  }
  return log;
}

nn::Checkpoint pretrain_single_modality(const ModelConfig& config, const std::vector<PreparedSequence>& data,
                                        Modality modality, const TrainConfig& train_config, TrainLog* log) {
  if (modality == Modality::fused) throw std::invalid_argument("pretraining needs the image or lidar modality");
  ModelConfig c = config;
  c.modality = modality;
  Model model = make_model(c, train_config.seed);
  TrainLog l = train(model, data, train_config);
  if (log) *log = std::move(l);
  return model_checkpoint(model);
}

nn::Checkpoint fine_tune_fusion(const ModelConfig& config, const nn::Checkpoint& image_ckpt,
                                const nn::Checkpoint& lidar_ckpt, const std::vector<PreparedSequence>& data,
                                const TrainConfig& train_config, TrainLog* log) {
  ModelConfig c = config;
  c.modality = Modality::fused;
  Model model = make_model(c, train_config.seed);
  for (const auto* ckpt : {&image_ckpt, &lidar_ckpt}) {
    if (ckpt->meta.contains("channels")) {
      const ModelConfig other = config_from_checkpoint(*ckpt);
      if (other.channels != c.channels) {
        throw nn::ShapeError("checkpoint channel widths " + ckpt->meta.at("channels") +
                             " do not match the configured widths");
      }
    }
  }
  nn::load_into(model.store, image_ckpt, "img.");
  nn::load_into(model.store, lidar_ckpt, "pc.");
  TrainLog l = train(model, data, train_config);
  if (log) *log = std::move(l);
  return model_checkpoint(model);
}

}  // namespace fusiontrack
