#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace asmloc;

namespace {

// Reference matcher written independently of the library: enumerate predictions
// in score order, mark the best unmatched same-class GT at >= threshold.
double brute_ap(const std::vector<VideoDetections>& preds, const std::vector<GroundTruthVideo>& gts, int cls,
                double th) {
  struct Item {
    double score;
    std::size_t v;
    ScoredSegment s;
  };
  std::vector<Item> items;
  for (std::size_t v = 0; v < preds.size(); ++v)
    for (const auto& s : preds[v].detections)
      if (s.cls == cls) items.push_back({s.score, v, s});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.v != b.v) return a.v < b.v;
    if (a.s.start != b.s.start) return a.s.start < b.s.start;
    return a.s.end < b.s.end;
  });
  int n_gt = 0;
  std::vector<std::vector<bool>> used;
  for (const auto& g : gts) {
    used.emplace_back(g.segments.size(), false);
    for (const auto& s : g.segments) n_gt += s.cls == cls;
  }
  if (n_gt == 0) return -1;
  std::vector<int> tp;
  for (const auto& it : items) {
    double best = -1;
    int bi = -1;
    for (std::size_t g = 0; g < gts[it.v].segments.size(); ++g) {
      const auto& s = gts[it.v].segments[g];
      if (s.cls != cls || used[it.v][g]) continue;
      const double inter = std::max(0, std::min(s.end, it.s.end) - std::max(s.start, it.s.start));
      const double iou = inter / (std::max(s.end, it.s.end) - std::min(s.start, it.s.start));
      if (iou >= th && iou > best) {
        best = iou;
        bi = static_cast<int>(g);
      }
    }
    if (bi >= 0) used[it.v][bi] = true;
    tp.push_back(bi >= 0);
  }
  // Non-interpolated: precision at each true positive, averaged over the GT count.
  double ap = 0;
  int c = 0;
  for (std::size_t i = 0; i < tp.size(); ++i)
    if (tp[i]) ap += static_cast<double>(++c) / static_cast<double>(i + 1);
  ap /= n_gt;
  return ap;
}

std::vector<ScoredSegment> brute_nms(std::vector<ScoredSegment> segs, double th) {
  std::stable_sort(segs.begin(), segs.end(), detection_order);
  std::vector<ScoredSegment> keep;
  for (const auto& s : segs) {
    bool ok = true;
    for (const auto& k : keep)
      if (k.cls == s.cls) {
        const double inter = std::max(0, std::min(s.end, k.end) - std::max(s.start, k.start));
        const double uni = (s.end - s.start) + (k.end - k.start) - inter;
        if (inter / uni >= th) ok = false;
      }
    if (ok) keep.push_back(s);
  }
  return keep;
}

}  // namespace

TEST(TemporalIou, HandExamples) {
  EXPECT_DOUBLE_EQ(temporal_iou(0, 4, 2, 6), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(temporal_iou(0, 4, 0, 4), 1.0);
  EXPECT_DOUBLE_EQ(temporal_iou(0, 2, 2, 4), 0.0);
  EXPECT_DOUBLE_EQ(temporal_iou(1, 3, 0, 10), 0.2);
}

TEST(TemporalIou, ZeroLengthIsAContractError) { EXPECT_THROW(temporal_iou(3, 3, 0, 5), ContractError); }

TEST(Nms, SuppressesOverlapsWithinClassOnly) {
  const std::vector<ScoredSegment> in{{0, 10, 1, 0.9}, {1, 10, 1, 0.8}, {1, 10, 2, 0.7}, {20, 30, 1, 0.5}};
  const auto out = nms(in, 0.45);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0], in[0]);
  EXPECT_EQ(out[1], in[2]);
  EXPECT_EQ(out[2], in[3]);
}

TEST(Nms, ThresholdOutsideOpenIntervalIsAContractError) {
  EXPECT_THROW(nms({}, 0.0), ContractError);
  EXPECT_THROW(nms({}, 1.0), ContractError);
}

TEST(Nms, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ScoredSegment> segs;
    for (int i = 0; i < 5; ++i) {
      const int s = std::uniform_int_distribution<int>(0, 15)(rng);
      segs.push_back({s, s + std::uniform_int_distribution<int>(1, 8)(rng), 1 + i % 2,
                      std::uniform_int_distribution<int>(0, 4)(rng) / 4.0});
    }
    EXPECT_EQ(nms(segs, 0.3), brute_nms(segs, 0.3));
  }
}

TEST(AveragePrecision, PerfectSingleDetection) {
  const std::vector<GroundTruthVideo> gt{{"a", {{0, 4, 1}}}};
  EXPECT_DOUBLE_EQ(average_precision({{"a", {{0, 4, 1, 0.9}}}}, gt, 1, 0.5), 1.0);
}

TEST(AveragePrecision, FalsePositiveRankedFirstHalvesAp) {
  const std::vector<GroundTruthVideo> gt{{"a", {{0, 4, 1}}}};
  EXPECT_DOUBLE_EQ(average_precision({{"a", {{10, 14, 1, 0.9}, {0, 4, 1, 0.5}}}}, gt, 1, 0.5), 0.5);
}

TEST(AveragePrecision, NoMatchIsZeroAndNoGtIsMinusOne) {
  const std::vector<GroundTruthVideo> gt{{"a", {{0, 4, 1}}}};
  EXPECT_DOUBLE_EQ(average_precision({{"a", {{10, 14, 1, 0.9}}}}, gt, 1, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({{"a", {}}}, gt, 1, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({{"a", {}}}, gt, 2, 0.5), -1.0);
}

TEST(AveragePrecision, DuplicateDetectionCountsOnce) {
  const std::vector<GroundTruthVideo> gt{{"a", {{0, 4, 1}, {10, 14, 1}}}};
  const double ap = average_precision({{"a", {{0, 4, 1, 0.9}, {0, 4, 1, 0.8}, {10, 14, 1, 0.7}}}}, gt, 1, 0.5);
  EXPECT_DOUBLE_EQ(ap, 0.5 * 1.0 + 0.5 * (2.0 / 3.0));
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(2);
  std::vector<GroundTruthVideo> gt{{"a", {{0, 5, 1}, {8, 12, 1}}}, {"b", {{3, 9, 1}}}};
  std::vector<VideoDetections> p{{"a", {}}, {"b", {}}};
  for (int i = 0; i < 8; ++i) {
    const int s = std::uniform_int_distribution<int>(0, 12)(rng);
    p[i % 2].detections.push_back({s, s + 3, 1, std::uniform_real_distribution<double>(0.01, 1)(rng)});
  }
  auto q = p;
  for (auto& v : q)
    for (auto& d : v.detections) d.score = std::log(d.score) * 3 + 7;
  EXPECT_DOUBLE_EQ(average_precision(p, gt, 1, 0.3), average_precision(q, gt, 1, 0.3));
}

TEST(AveragePrecision, MatchesBruteForceOnThreeVideoInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GroundTruthVideo> gt;
    std::vector<VideoDetections> p;
    for (int v = 0; v < 3; ++v) {
      GroundTruthVideo g{std::to_string(v), {}};
      int at = 0;
      for (int k = 0; k < 2; ++k) {
        const int s = at + std::uniform_int_distribution<int>(0, 4)(rng);
        const int e = s + std::uniform_int_distribution<int>(1, 6)(rng);
        g.segments.push_back({s, e, 1 + (k + v) % 2});
        at = e;
      }
      gt.push_back(g);
      VideoDetections d{g.id, {}};
      for (int k = 0; k < 4; ++k) {
        const int s = std::uniform_int_distribution<int>(0, 20)(rng);
        d.detections.push_back({s, s + std::uniform_int_distribution<int>(1, 6)(rng), 1 + k % 2,
                                std::uniform_int_distribution<int>(1, 5)(rng) / 5.0});
      }
      p.push_back(d);
    }
    for (int c = 1; c <= 2; ++c)
      for (double th : {0.1, 0.5, 0.7}) EXPECT_NEAR(average_precision(p, gt, c, th), brute_ap(p, gt, c, th), 1e-12);
  }
}

TEST(MeanAveragePrecision, NonIncreasingInThreshold) {
  std::mt19937_64 rng(4);
  std::vector<GroundTruthVideo> gt{{"a", {{0, 6, 1}, {10, 13, 2}}}};
  std::vector<VideoDetections> p{{"a", {}}};
  for (int i = 0; i < 10; ++i) {
    const int s = std::uniform_int_distribution<int>(0, 12)(rng);
    p[0].detections.push_back({s, s + std::uniform_int_distribution<int>(1, 6)(rng), 1 + i % 2,
                               std::uniform_real_distribution<double>(0, 1)(rng)});
  }
  double prev = 2;
  for (double th = 0.1; th <= 0.9; th += 0.1) {
    const double m = mean_average_precision(p, gt, 2, th);
    EXPECT_LE(m, prev + 1e-12);
    prev = m;
  }
}

TEST(ScoreDetections, PerfectPredictionsScoreOneEverywhere) {
  std::vector<GroundTruthVideo> gt{{"a", {{0, 2, 1}, {5, 30, 2}}}, {"b", {{3, 8, 1}}}};
  std::vector<VideoDetections> p;
  for (const auto& g : gt) {
    VideoDetections d{g.id, {}};
    for (const auto& s : g.segments) d.detections.push_back({s.start, s.end, s.cls, 1.0});
    p.push_back(d);
  }
  const auto r = score_detections(p, gt, 2, EvalConfig{}, 0.64);
  for (double m : r.map) EXPECT_DOUBLE_EQ(m, 1.0);
  EXPECT_DOUBLE_EQ(r.average_map, 1.0);
  EXPECT_DOUBLE_EQ(r.short_average_map, 1.0);
}

TEST(ScoreDetections, EmptyPredictionsScoreZero) {
  std::vector<GroundTruthVideo> gt{{"a", {{0, 2, 1}}}};
  const auto r = score_detections({{"a", {}}}, gt, 2, EvalConfig{}, 0.64);
  EXPECT_DOUBLE_EQ(r.average_map, 0.0);
  EXPECT_EQ(r.class_ap[0][1], -1.0);
}

TEST(ScoreDetections, BucketsOnlyCountTheirGroundTruth) {
  // One snippet is 0.64 s (XS); 20 snippets are 12.8 s (XL).
  std::vector<GroundTruthVideo> gt{{"a", {{0, 1, 1}, {10, 30, 1}}}};
  const auto r = score_detections({{"a", {{10, 30, 1, 0.9}}}}, gt, 1, EvalConfig{}, 0.64);
  EXPECT_DOUBLE_EQ(r.bucket_average_map[4], 1.0);
  EXPECT_DOUBLE_EQ(r.bucket_average_map[0], 0.0);
  EXPECT_EQ(r.bucket_average_map[1], -1.0);
  EXPECT_DOUBLE_EQ(r.short_average_map, 0.0);
}

TEST(EvalConfig, BucketOfSeconds) {
  const EvalConfig c;
  EXPECT_EQ(c.bucket_of(0.5), 0u);
  EXPECT_EQ(c.bucket_of(1.0), 0u);  // XS is (0, 1]
  EXPECT_EQ(c.bucket_of(1.5), 1u);
  EXPECT_EQ(c.bucket_of(2.0), 1u);
  EXPECT_EQ(c.bucket_of(3.9), 2u);
  EXPECT_EQ(c.bucket_of(5.0), 3u);
  EXPECT_EQ(c.bucket_of(100.0), 4u);
}

TEST(EvalConfig, ProfilesSetTheGrids) {
  const auto thumos = json::parse(R"({"profile":"thumos"})").get<EvalConfig>();
  EXPECT_EQ(thumos.iou_thresholds.size(), 7u);
  EXPECT_DOUBLE_EQ(thumos.nms_iou, 0.45);
  const auto anet = json::parse(R"({"profile":"activitynet"})").get<EvalConfig>();
  EXPECT_EQ(anet.iou_thresholds.size(), 10u);
  EXPECT_NEAR(anet.iou_thresholds.back(), 0.95, 1e-12);
  EXPECT_DOUBLE_EQ(anet.nms_iou, 0.9);
}

TEST(GroundTruth, MissingSegmentsAreAContractError) {
  Dataset ds;
  ds.num_classes = 2;
  VideoRecord v;
  v.id = "x";
  v.classes = {1};
  ds.videos.push_back(v);
  EXPECT_THROW(ground_truth_of(ds), ContractError);
}
