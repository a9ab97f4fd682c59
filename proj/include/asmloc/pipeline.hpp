#pragma once

// Full forward pass (optional DSS, intra and inter attention ahead of the
// heads), the combined training loss, two-pass inference and model evaluation.

#include <optional>
#include <string>
#include <vector>

#include "asmloc/base_model.hpp"
#include "asmloc/config.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/evaluation.hpp"
#include "asmloc/proposals.hpp"
#include "asmloc/segment_modeling.hpp"

namespace asmloc {

struct SegmentSwitches {
  bool dss = false;
  bool intra = false;
  bool inter = false;

  bool any() const { return dss || intra || inter; }
};

inline SegmentSwitches configured_switches(const ModelConfig& c) { return {c.use_dss, c.use_intra, c.use_inter}; }

struct ForwardPass {
  ModelOutputs outputs;                   // on the resampled timeline when plan is set
  std::vector<ActionProposal> proposals;  // in output coordinates
  std::optional<SamplingPlan> plan;
  std::vector<Tensor> intra_weights;
  std::vector<Tensor> inter_weights;
};

/// With no proposals every segment module is the identity, so this is the base model.
inline ForwardPass forward(const Tensor& features, const ParameterStore& p, const ModelConfig& cfg,
                           const std::vector<ActionProposal>& proposals, SegmentSwitches sw) {
  const std::size_t T = features.rows();
  validate_proposals(proposals, T, "forward");
  ForwardPass f;
  f.proposals = proposals;
  Tensor input = features;
  if (sw.dss && !proposals.empty()) {
    f.plan = build_sampling_plan(proposals, T, cfg.gamma);
    input = resample_features(features, *f.plan);
    f.proposals = f.plan->remapped;
  }
  Tensor x = embed(input, p, cfg);
  if (!f.proposals.empty()) {
    for (int d = 0; d < cfg.attention_depth; ++d) {
      if (sw.intra) {
        const IntraSegmentParams ip{p.at(detail::layer_name("intra", d, "wq")),
                                    p.at(detail::layer_name("intra", d, "wk")),
                                    p.at(detail::layer_name("intra", d, "wv")),
                                    p.at(detail::layer_name("intra", d, "wo")),
                                    p.at(detail::layer_name("intra", d, "bn_scale")),
                                    p.at(detail::layer_name("intra", d, "bn_shift"))};
        auto r = intra_segment_attention(x, build_attention_mask(f.proposals, T), ip, cfg.heads, cfg.bn_eps);
        x = r.output;
        f.intra_weights.insert(f.intra_weights.end(), r.weights.begin(), r.weights.end());
      }
      if (sw.inter) {
        const InterSegmentParams ip{p.at(detail::layer_name("inter", d, "wq")),
                                    p.at(detail::layer_name("inter", d, "wk")),
                                    p.at(detail::layer_name("inter", d, "wv")),
                                    p.at(detail::layer_name("inter", d, "wo"))};
        auto r = inter_segment_attention(x, f.proposals, ip, cfg.heads);
        x = r.output;
        f.inter_weights.insert(f.inter_weights.end(), r.weights.begin(), r.weights.end());
      }
    }
  }
  f.outputs = heads(x, p);
  return f;
}

struct VideoProbs {
  Tensor fg;
  Tensor bg;
};

inline VideoProbs video_probs(const ModelOutputs& o, const ModelConfig& cfg) {
  const auto wc = attention_weighted_cas(o.cas, o.attention);
  const std::size_t k = cfg.topk(o.cas.rows());
  return {topk_video_probs(wc.fg, k), topk_video_probs(wc.bg, k)};
}

struct LossTerms {
  Tensor total;
  double fg = 0, bg = 0, abg = 0, video = 0, instance = 0;
  bool has_instance = false;
};

/// Video loss, plus lambda_ins * L_ins when asked and proposals exist.
inline LossTerms training_loss(const ForwardPass& f, const LabelPair& y, const ModelConfig& cfg, bool instance_loss) {
  const auto probs = video_probs(f.outputs, cfg);
  const auto v = video_losses(probs.fg, probs.bg, y.fg, y.bg, cfg);
  LossTerms l;
  l.total = v.total;
  l.fg = v.fg.item();
  l.bg = v.bg.item();
  l.abg = v.abg.item();
  l.video = v.total.item();
  if (instance_loss && cfg.use_ins && !f.proposals.empty()) {
    const Matrix q = build_pseudo_labels(f.proposals, f.outputs.cas.rows(), cfg.num_classes);
    const Tensor ins = pseudo_instance_loss(f.outputs.cas, q, f.outputs.uncertainty, cfg.beta);
    l.instance = ins.item();
    l.has_instance = true;
    l.total = add(l.total, scale(ins, cfg.lambda_ins));
  }
  return l;
}

/// Classes whose foreground probability reaches `threshold`; the argmax class otherwise.
inline std::vector<int> select_classes(std::span<const double> p_fg, int num_classes, double threshold) {
  std::vector<int> out;
  int best = 1;
  for (int c = 1; c <= num_classes; ++c) {
    if (p_fg[c - 1] >= threshold) out.push_back(c);
    if (p_fg[c - 1] > p_fg[best - 1]) best = c;
  }
  if (out.empty()) out.push_back(best);
  return out;
}

/// Extraction over the attention sweep, class-wise NMS, then proposal selection.
inline std::vector<ActionProposal> proposals_from_scores(const SnippetScores& s, const std::vector<int>& classes,
                                                         const ModelConfig& cfg, const EvalConfig& ev) {
  auto segments = nms(extract_segments(s, classes, ev.sweep()), ev.nms_iou);
  return generate_proposals(segments, classes, cfg.alpha, cfg.delta, s.length());
}

inline SnippetScores map_scores_to_original(const SnippetScores& s, const SamplingPlan& plan) {
  SnippetScores out{map_to_original(s.probs, plan), {}};
  const Matrix fg = map_to_original(Matrix(s.length(), 1, s.fg), plan);
  out.fg = fg.values;
  return out;
}

struct VideoInference {
  std::vector<double> video_probs;  // p_fg over C+1 slots
  std::vector<int> classes;
  std::vector<ActionProposal> proposals;  // original timeline; empty for the base model
  SnippetScores scores;                   // original timeline
  std::vector<ScoredSegment> detections;
};

/// Base model: one pass. With segment modules: a bare pass proposes segments for
/// the predicted classes, then a second pass runs the modules on them.
inline VideoInference infer_video(const FeatureSequence& features, const ParameterStore& p, const ModelConfig& cfg,
                                  const EvalConfig& ev, bool with_segments) {
  NoGradGuard no_grad;
  const Tensor f = Tensor::constant(features);
  VideoInference r;
  ForwardPass pass = forward(f, p, cfg, {}, {});
  if (with_segments) {
    const auto pf = video_probs(pass.outputs, cfg).fg;
    const auto classes = select_classes(pf.data(), cfg.num_classes, ev.class_threshold);
    r.proposals = proposals_from_scores(snippet_scores(pass.outputs), classes, cfg, ev);
    SegmentSwitches sw = configured_switches(cfg);
    sw.dss = sw.dss && cfg.dss_at_inference;
    pass = forward(f, p, cfg, r.proposals, sw);
  }
  const auto pf = video_probs(pass.outputs, cfg).fg;
  r.video_probs.assign(pf.data().begin(), pf.data().end());
  r.classes = select_classes(pf.data(), cfg.num_classes, ev.class_threshold);
  r.scores = snippet_scores(pass.outputs);
  if (pass.plan) r.scores = map_scores_to_original(r.scores, *pass.plan);
  r.detections = nms(extract_segments(r.scores, r.classes, ev.sweep()), ev.nms_iou);
  return r;
}

inline DetectionResult evaluate_model(const ParameterStore& p, const ModelConfig& cfg, const Dataset& ds,
                                      const EvalConfig& ev, bool with_segments) {
  const auto gts = ground_truth_of(ds);
  std::vector<VideoDetections> preds;
  for (const auto& v : ds.videos) preds.push_back({v.id, infer_video(v.features, p, cfg, ev, with_segments).detections});
  return score_detections(std::move(preds), gts, ds.num_classes, ev, ds.snippet_seconds);
}

}  // namespace asmloc
