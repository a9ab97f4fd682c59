#pragma once

// Detection metrics: t-IoU, class-wise NMS, non-interpolated AP, mAP over an
// IoU grid and duration-bucketed mAP.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/config.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/errors.hpp"

namespace asmloc {

struct ScoredSegment {
  int start = 0;
  int end = 0;
  int cls = 0;
  double score = 0.0;
  bool operator==(const ScoredSegment&) const = default;
};

inline void to_json(json& j, const ScoredSegment& s) { j = json::array({s.start, s.end, s.cls, s.score}); }

inline double temporal_iou(int a_start, int a_end, int b_start, int b_end) {
  if (a_end <= a_start || b_end <= b_start) throw ContractError("temporal_iou: zero-length interval");
  const int inter = std::max(0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const int uni = (a_end - a_start) + (b_end - b_start) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

template <class A, class B>
double temporal_iou(const A& a, const B& b) {
  return temporal_iou(a.start, a.end, b.start, b.end);
}

/// Score descending, then start, then end, then class.
inline bool detection_order(const ScoredSegment& a, const ScoredSegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  if (a.end != b.end) return a.end < b.end;
  return a.cls < b.cls;
}

/// Greedy per-class suppression. Output is in detection_order.
inline std::vector<ScoredSegment> nms(std::vector<ScoredSegment> segments, double t_iou) {
  if (!(t_iou > 0 && t_iou < 1)) throw ContractError("nms: threshold must lie in (0, 1)");
  std::stable_sort(segments.begin(), segments.end(), detection_order);
  std::vector<ScoredSegment> kept;
  std::vector<char> dead(segments.size(), 0);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(segments[i]);
    for (std::size_t j = i + 1; j < segments.size(); ++j)
      if (!dead[j] && segments[j].cls == segments[i].cls && temporal_iou(segments[i], segments[j]) >= t_iou) dead[j] = 1;
  }
  return kept;
}

/// Detections and GT of one video.
struct VideoDetections {
  std::string id;
  std::vector<ScoredSegment> detections;
};

struct GroundTruthVideo {
  std::string id;
  std::vector<GtSegment> segments;
};

namespace detail {

struct RankedPrediction {
  std::size_t video;
  ScoredSegment seg;
};

inline bool ranked_order(const RankedPrediction& a, const RankedPrediction& b) {
  if (a.seg.score != b.seg.score) return a.seg.score > b.seg.score;
  if (a.video != b.video) return a.video < b.video;
  if (a.seg.start != b.seg.start) return a.seg.start < b.seg.start;
  return a.seg.end < b.seg.end;
}

}  // namespace detail

/// THUMOS-style AP for one class. `counted(video, gt_index)` selects the GT that
/// enter the denominator; a prediction matched to an uncounted GT is dropped
/// from the ranking. Returns -1 when no GT is counted.
template <class Counted>
double average_precision(const std::vector<VideoDetections>& preds, const std::vector<GroundTruthVideo>& gts, int cls,
                         double iou_threshold, Counted counted) {
  if (preds.size() != gts.size()) throw ContractError("average_precision: prediction and GT video counts differ");
  std::size_t n_gt = 0;
  for (std::size_t v = 0; v < gts.size(); ++v)
    for (std::size_t g = 0; g < gts[v].segments.size(); ++g)
      if (gts[v].segments[g].cls == cls && counted(v, g)) ++n_gt;
  if (n_gt == 0) return -1.0;

  std::vector<detail::RankedPrediction> ranked;
  for (std::size_t v = 0; v < preds.size(); ++v)
    for (const auto& s : preds[v].detections)
      if (s.cls == cls) ranked.push_back({v, s});
  std::stable_sort(ranked.begin(), ranked.end(), detail::ranked_order);

  std::vector<std::vector<char>> used(gts.size());
  for (std::size_t v = 0; v < gts.size(); ++v) used[v].assign(gts[v].segments.size(), 0);

  double tp = 0, fp = 0, ap = 0;
  for (const auto& r : ranked) {
    const auto& gv = gts[r.video].segments;
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gv.size(); ++g) {
      if (gv[g].cls != cls || used[r.video][g]) continue;
      const double iou = temporal_iou(r.seg, gv[g]);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[r.video][best] = 1;
      if (!counted(r.video, static_cast<std::size_t>(best))) continue;
      tp += 1;
      ap += tp / (tp + fp);
    } else {
      fp += 1;
    }
  }
  return ap / static_cast<double>(n_gt);
}

inline double average_precision(const std::vector<VideoDetections>& preds, const std::vector<GroundTruthVideo>& gts,
                                int cls, double iou_threshold) {
  return average_precision(preds, gts, cls, iou_threshold, [](std::size_t, std::size_t) { return true; });
}

/// Mean AP over classes that have counted GT; -1 when none do.
template <class Counted>
double mean_average_precision(const std::vector<VideoDetections>& preds, const std::vector<GroundTruthVideo>& gts,
                              int num_classes, double iou_threshold, Counted counted) {
  double total = 0;
  int n = 0;
  for (int c = 1; c <= num_classes; ++c) {
    const double ap = average_precision(preds, gts, c, iou_threshold, counted);
    if (ap < 0) continue;
    total += ap;
    ++n;
  }
  return n ? total / n : -1.0;
}

inline double mean_average_precision(const std::vector<VideoDetections>& preds,
                                     const std::vector<GroundTruthVideo>& gts, int num_classes, double iou_threshold) {
  return mean_average_precision(preds, gts, num_classes, iou_threshold,
                                [](std::size_t, std::size_t) { return true; });
}

struct DetectionResult {
  std::vector<VideoDetections> detections;
  std::vector<double> iou_thresholds;
  std::vector<std::vector<double>> class_ap;  // [threshold][class-1], -1 where the class has no GT
  std::vector<double> map;                    // per threshold
  double average_map = 0.0;
  std::vector<std::string> bucket_names;
  std::vector<double> bucket_average_map;  // -1 when the bucket holds no GT
  double short_average_map = -1.0;         // XS and S buckets pooled
};

/// Averaged mAP over the IoU grid restricted to GT whose bucket is in `buckets`.
inline double bucket_average_map(const std::vector<VideoDetections>& preds, const std::vector<GroundTruthVideo>& gts,
                                 int num_classes, const EvalConfig& cfg, double snippet_seconds,
                                 const std::set<std::size_t>& buckets) {
  auto counted = [&](std::size_t v, std::size_t g) {
    return buckets.count(cfg.bucket_of(gts[v].segments[g].duration() * snippet_seconds)) != 0;
  };
  double total = 0;
  for (double th : cfg.iou_thresholds) {
    const double m = mean_average_precision(preds, gts, num_classes, th, counted);
    if (m < 0) return -1.0;
    total += m;
  }
  return total / static_cast<double>(cfg.iou_thresholds.size());
}

inline DetectionResult score_detections(std::vector<VideoDetections> preds, const std::vector<GroundTruthVideo>& gts,
                                        int num_classes, const EvalConfig& cfg, double snippet_seconds) {
  DetectionResult r;
  r.iou_thresholds = cfg.iou_thresholds;
  for (double th : cfg.iou_thresholds) {
    std::vector<double> row;
    double total = 0;
    int n = 0;
    for (int c = 1; c <= num_classes; ++c) {
      const double ap = average_precision(preds, gts, c, th);
      row.push_back(ap);
      if (ap >= 0) {
        total += ap;
        ++n;
      }
    }
    r.class_ap.push_back(std::move(row));
    r.map.push_back(n ? total / n : 0.0);
  }
  r.average_map = std::accumulate(r.map.begin(), r.map.end(), 0.0) / static_cast<double>(r.map.size());
  r.bucket_names = cfg.bucket_names;
  for (std::size_t b = 0; b < cfg.bucket_edges.size(); ++b)
    r.bucket_average_map.push_back(bucket_average_map(preds, gts, num_classes, cfg, snippet_seconds, {b}));
  if (cfg.bucket_edges.size() >= 2)
    r.short_average_map = bucket_average_map(preds, gts, num_classes, cfg, snippet_seconds, {0, 1});
  r.detections = std::move(preds);
  return r;
}

inline std::vector<GroundTruthVideo> ground_truth_of(const Dataset& ds) {
  std::vector<GroundTruthVideo> out;
  for (const auto& v : ds.videos) {
    if (!v.gt_segments) throw ContractError("evaluation: video '" + v.id + "' has no ground-truth segments");
    out.push_back({v.id, *v.gt_segments});
  }
  return out;
}

inline json metrics_json(const DetectionResult& r) {
  json j;
  j["iou_thresholds"] = r.iou_thresholds;
  j["map"] = r.map;
  j["average_map"] = r.average_map;
  j["class_ap"] = r.class_ap;
  json buckets = json::object();
  for (std::size_t b = 0; b < r.bucket_names.size(); ++b)
    buckets[r.bucket_names[b]] = r.bucket_average_map[b] < 0 ? json(nullptr) : json(r.bucket_average_map[b]);
  j["bucket_average_map"] = buckets;
  j["short_average_map"] = r.short_average_map < 0 ? json(nullptr) : json(r.short_average_map);
  return j;
}

inline json detections_json(const DetectionResult& r) {
  json j = json::object();
  for (const auto& v : r.detections) j[v.id] = v.detections;
  return j;
}

/// One row per IoU threshold; bucket columns repeat the averaged bucket mAP.
inline std::string metrics_csv(const DetectionResult& r) {
  std::string out = "iou,map";
  for (const auto& n : r.bucket_names) out += ",avg_map_" + n;
  out += "\n";
  char buf[64];
  auto num = [&](double v) {
    if (v < 0) return std::string();
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < r.iou_thresholds.size(); ++i) {
    out += num(r.iou_thresholds[i]) + "," + num(r.map[i]);
    for (double b : r.bucket_average_map) out += "," + num(b);
    out += "\n";
  }
  return out;
}

inline void write_report(const std::filesystem::path& dir, const std::string& stem, const DetectionResult& r,
                         bool with_detections) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream js(dir / (stem + ".json"));
    if (!js) throw IoError("cannot write " + (dir / (stem + ".json")).string());
    js << metrics_json(r).dump(2) << "\n";
  }
  {
    std::ofstream csv(dir / (stem + ".csv"));
    if (!csv) throw IoError("cannot write " + (dir / (stem + ".csv")).string());
    csv << metrics_csv(r);
  }
  if (with_detections) {
    std::ofstream d(dir / (stem + "_detections.json"));
    d << detections_json(r).dump() << "\n";
  }
}

}  // namespace asmloc
