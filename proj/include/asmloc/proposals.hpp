#pragma once

// Segment extraction by thresholding foreground attention, proposal selection
// and extension, snippet pseudo-labels and the uncertainty-weighted instance loss.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/base_model.hpp"
#include "asmloc/errors.hpp"
#include "asmloc/evaluation.hpp"
#include "asmloc/ops.hpp"
#include "asmloc/segment_modeling.hpp"

namespace asmloc {

/// Detached class probabilities softmax(P) and the foreground attention column.
struct SnippetScores {
  Matrix probs;            // T×(C+1)
  std::vector<double> fg;  // T

  std::size_t length() const { return fg.size(); }
};

inline SnippetScores snippet_scores(const ModelOutputs& o) {
  const Tensor probs = softmax(o.cas.detach(), 1);
  SnippetScores s{probs.to_matrix(), {}};
  for (std::size_t t = 0; t < o.attention.rows(); ++t) s.fg.push_back(o.attention.at(t, kForeground));
  return s;
}

/// Pooled over every threshold: each maximal run with fg >= θ yields one
/// segment per requested class, scored by the run mean of probs[t, c] * fg[t].
inline std::vector<ScoredSegment> extract_segments(const SnippetScores& s, const std::vector<int>& classes,
                                                   const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ContractError("extract_segments: empty threshold list");
  const auto T = static_cast<int>(s.length());
  std::vector<ScoredSegment> out;
  for (double th : thresholds) {
    int t = 0;
    while (t < T) {
      if (s.fg[t] < th) {
        ++t;
        continue;
      }
      int e = t;
      while (e < T && s.fg[e] >= th) ++e;
      for (int c : classes) {
        double q = 0;
        for (int u = t; u < e; ++u) q += s.probs(u, static_cast<std::size_t>(c - 1)) * s.fg[u];
        out.push_back({t, e, c, q / (e - t)});
      }
      t = e;
    }
  }
  return out;
}

inline std::vector<ScoredSegment> extract_segments(const ModelOutputs& o, const std::vector<int>& classes,
                                                   const std::vector<double>& thresholds) {
  return extract_segments(snippet_scores(o), classes, thresholds);
}

/// Largest K with the top-K score sum <= alpha * total, never below 1.
inline std::size_t select_count(const std::vector<double>& sorted_scores, double alpha) {
  if (sorted_scores.empty()) return 0;
  double total = 0;
  for (double q : sorted_scores) total += q;
  const double budget = alpha * total;
  const double tol = 1e-12 * std::max(1.0, std::abs(total));
  std::size_t k = 0;
  double run = 0;
  for (double q : sorted_scores) {
    if (run + q > budget + tol) break;
    run += q;
    ++k;
  }
  return std::max<std::size_t>(k, 1);
}

/// Per class: keep the top-scoring segments covering an alpha share of the
/// total score, extend each side by delta * duration, round outward, clip.
inline std::vector<ActionProposal> generate_proposals(const std::vector<ScoredSegment>& segments,
                                                      const std::vector<int>& classes, double alpha, double delta,
                                                      std::size_t T) {
  if (!(alpha > 0 && alpha <= 1)) throw ContractError("generate_proposals: alpha must lie in (0, 1]");
  if (!(delta >= 0)) throw ContractError("generate_proposals: delta must be >= 0");
  std::vector<ActionProposal> out;
  for (int c : classes) {
    std::vector<ScoredSegment> mine;
    for (const auto& s : segments)
      if (s.cls == c) mine.push_back(s);
    std::stable_sort(mine.begin(), mine.end(), detection_order);
    std::vector<double> scores;
    for (const auto& s : mine) scores.push_back(s.score);
    const std::size_t k = select_count(scores, alpha);
    for (std::size_t i = 0; i < k; ++i) {
      const double d = mine[i].end - mine[i].start;
      const double s = std::floor(mine[i].start - delta * d + 1e-9);
      const double e = std::ceil(mine[i].end + delta * d - 1e-9);
      out.push_back({static_cast<int>(std::max(0.0, s)), static_cast<int>(std::min<double>(double(T), e)), c});
    }
  }
  return out;
}

/// Q̃: one-hot class per covering proposal, background where uncovered, rows l1-normalized.
inline Matrix build_pseudo_labels(const std::vector<ActionProposal>& proposals, std::size_t T, int num_classes) {
  validate_proposals(proposals, T, "build_pseudo_labels");
  const auto K = static_cast<std::size_t>(num_classes + 1);
  Matrix q(T, K, 0.0);
  for (const auto& p : proposals) {
    if (p.cls < 1 || p.cls > num_classes) throw ContractError("build_pseudo_labels: class id out of range");
    for (int t = p.start; t < p.end; ++t) q(t, p.cls - 1) = 1.0;
  }
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0;
    for (std::size_t c = 0; c < K; ++c) s += q(t, c);
    if (s == 0) {
      q(t, K - 1) = 1.0;
      continue;
    }
    for (std::size_t c = 0; c < K; ++c) q(t, c) /= s;
  }
  return q;
}

/// mean_t [ exp(-U_t) * CE(softmax(P_t), Q̃_t) + beta * U_t ].
inline Tensor pseudo_instance_loss(const Tensor& cas, const Matrix& pseudo, const Tensor& uncertainty, double beta) {
  if (pseudo.rows != cas.rows() || pseudo.cols != cas.cols() || uncertainty.size() != cas.rows())
    throw DimensionError("pseudo_instance_loss: P, Q̃ and U disagree on shape");
  const Tensor ce = row_cross_entropy(softmax(cas, 1), pseudo);
  return mean(add(mul(exp(scale(uncertainty, -1.0)), ce), scale(uncertainty, beta)));
}

// ---------------------------------------------------------------------------
// Persistence: {"video id": [[start, end, class], ...]}

using ProposalSet = std::map<std::string, std::vector<ActionProposal>>;

inline json proposals_json(const ProposalSet& set) {
  json j = json::object();
  for (const auto& [id, props] : set) {
    json arr = json::array();
    for (const auto& p : props) arr.push_back({p.start, p.end, p.cls});
    j[id] = arr;
  }
  return j;
}

inline ProposalSet proposals_from_json(const json& j) {
  ProposalSet set;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto& v = set[it.key()];
    for (const auto& p : it.value()) v.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>()});
  }
  return set;
}

inline void write_proposals(const std::filesystem::path& path, const ProposalSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write proposals: " + path.string());
  out << proposals_json(set).dump() << "\n";
}

inline ProposalSet read_proposals(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError(path.string());
  std::ifstream in(path);
  try {
    return proposals_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError("proposal file " + path.string() + ": " + e.what());
  }
}

/// Mean over GT segments of the best t-IoU against same-class proposals.
inline double proposal_gt_iou(const std::vector<ActionProposal>& proposals, const std::vector<GtSegment>& gt) {
  if (gt.empty()) return 0.0;
  double total = 0;
  for (const auto& g : gt) {
    double best = 0;
    for (const auto& p : proposals)
      if (p.cls == g.cls) best = std::max(best, temporal_iou(p, g));
    total += best;
  }
  return total / static_cast<double>(gt.size());
}

}  // namespace asmloc
