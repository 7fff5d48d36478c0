#include "fusiontrack/tracker.hpp"

#include "fusiontrack/metrics.hpp"

namespace fusiontrack {

PreparedSequence prepare_sequence(const SequenceData& seq, const ModelConfig& config) {
  PreparedSequence out;
  out.name = seq.name;
  out.gt = seq.gt;
  out.frames.resize(static_cast<std::size_t>(seq.frames()));
  out.gt_ids.resize(static_cast<std::size_t>(seq.frames()));
  for (int f = 0; f < seq.frames(); ++f) {
    FrameInput& fi = out.frames[static_cast<std::size_t>(f)];
    fi.frame = f;
    if (const auto it = seq.detections.find(f); it != seq.detections.end()) fi.detections = it->second;
    const auto& image = seq.images[static_cast<std::size_t>(f)];
    const auto& cloud = seq.clouds[static_cast<std::size_t>(f)];
    const ProjectedPoints projected = project_to_image(cloud, seq.calib);
    fi.inputs.resize(fi.detections.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t j = 0; j < fi.detections.size(); ++j)
      fi.inputs[j] = prepare_detection(config, image, cloud, projected, fi.detections[j].bbox);

    auto& ids = out.gt_ids[static_cast<std::size_t>(f)];
    ids.assign(fi.detections.size(), -1);
    if (const auto g = seq.gt.find(f); g != seq.gt.end()) {
      std::vector<LabeledBox> gts;
      for (const auto& b : g->second)
        if (b.class_name != "DontCare") gts.push_back(b);
      const auto m = metrics::match_frame(gts, fi.detections, {}, 0.5);
      for (const auto& [gi, dj] : m.pairs) ids[dj] = gts[gi].track_id;
    }
  }
  return out;
}

std::vector<DetectionFeatures> extract_frame_features(const Model& model, const FrameInput& frame) {
  std::vector<DetectionFeatures> feats(frame.inputs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < frame.inputs.size(); ++j) feats[j] = extract(model, frame.inputs[j]);
  return feats;
}

FrameBoxes track_sequence(const Model& model, const PreparedSequence& seq, const TrackerConfig& config,
                          std::string* log) {
  using namespace association;
  const Modality modality = model.config.modality;
  const Index width = model.config.width();
  TrackletStore store;
  FrameBoxes out;
  for (const FrameInput& frame : seq.frames) {
    const auto feats = extract_frame_features(model, frame);
    const auto n = static_cast<Index>(feats.size());
    Matrix desc(n, width);
    for (Index j = 0; j < n; ++j) desc.row(j) = descriptor(feats[static_cast<std::size_t>(j)], modality).transpose();

    const Matrix tracks = store.active_features(width);
    AdjacencyScores scores;
    scores.affinity = estimate_affinity(model.store, model.heads.affinity, tracks, desc);
    scores.confidence = estimate_confidence(model.store, model.heads, desc);
    scores.new_score = estimate_start_end(model.store, model.heads, desc).new_score;
    scores.end_score = estimate_start_end(model.store, model.heads, tracks).end_score;
    if (tracks.rows() == 0) scores.affinity.resize(0, n);

    const FlowProblem problem = build_flow_problem(scores, config.conf_threshold);
    const Assignment assignment = solve_assignment(problem);
    if (log) *log += format_assignment(assignment, frame.frame);

    std::vector<LabeledBox> dets = frame.detections;
    for (std::size_t j = 0; j < dets.size(); ++j)
      if (!dets[j].score) dets[j].score = scores.confidence(static_cast<Index>(j));
    auto emitted = birth_death_update(assignment, store, frame.frame, dets, desc, config.max_age,
                                      scores.end_score, config.end_threshold);
    if (!emitted.empty()) out[frame.frame] = std::move(emitted);
  }
  return out;
}

}  // namespace fusiontrack
