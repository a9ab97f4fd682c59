#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace asmloc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("asmloc_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small_config(std::uint64_t seed = 5) {
  SyntheticConfig c;
  c.num_videos = 20;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(EncodeLabels, SingleClass) {
  const auto y = encode_labels({3}, 5);
  EXPECT_EQ(y.fg, (std::vector<double>{0, 0, 1, 0, 0, 0}));
  EXPECT_EQ(y.bg, (std::vector<double>{0, 0, 0, 0, 0, 1}));
}

TEST(EncodeLabels, TwoClassesAreL1Normalized) {
  const auto y = encode_labels({1, 2}, 5);
  EXPECT_EQ(y.fg, (std::vector<double>{0.5, 0.5, 0, 0, 0, 0}));
}

TEST(EncodeLabels, ForegroundAndBackgroundAreDisjoint) {
  for (int c = 1; c <= 4; ++c) {
    const auto y = encode_labels({c, 4}, 4);
    double dot = 0;
    for (std::size_t i = 0; i < y.fg.size(); ++i) dot += y.fg[i] * y.bg[i];
    EXPECT_EQ(dot, 0.0);
  }
}

TEST(EncodeLabels, EmptySetAndRangeErrors) {
  EXPECT_THROW(encode_labels({}, 5), ContractError);
  EXPECT_THROW(encode_labels({6}, 5), ContractError);
}

TEST(Synthetic, ZeroNoiseSegmentEqualsClassMean) {
  SyntheticConfig c;
  c.num_classes = 3;
  c.num_videos = 1;
  c.segments_min = c.segments_max = 1;
  c.noise = 0.0;
  const auto ds = generate_synthetic(c);
  const auto& v = ds.videos[0];
  const auto& g = (*v.gt_segments)[0];
  for (int t = g.start + 1; t < g.end; ++t)
    for (std::size_t d = 0; d < v.features.cols; ++d) EXPECT_EQ(v.features(t, d), v.features(g.start, d));
  for (std::size_t t = 0; t < v.length(); ++t)
    if (static_cast<int>(t) < g.start || static_cast<int>(t) >= g.end)
      for (double x : v.features.row(t)) EXPECT_EQ(x, 0.0);
}

TEST(Synthetic, FixedSeedIsBitIdentical) {
  EXPECT_EQ(generate_synthetic(small_config(9)), generate_synthetic(small_config(9)));
  EXPECT_NE(generate_synthetic(small_config(9)), generate_synthetic(small_config(10)));
}

TEST(Synthetic, SharedClassSeedKeepsClassGeometry) {
  auto a = small_config(1), b = small_config(2);
  a.class_seed = b.class_seed = 4;
  a.noise = b.noise = 0.0;
  const auto da = generate_synthetic(a), db = generate_synthetic(b);
  auto mean_of = [](const Dataset& ds, int cls) -> std::vector<double> {
    for (const auto& v : ds.videos)
      for (const auto& g : *v.gt_segments)
        if (g.cls == cls) return {v.features.row(g.start).begin(), v.features.row(g.start).end()};
    return {};
  };
  for (int c = 1; c <= 5; ++c) {
    const auto ma = mean_of(da, c), mb = mean_of(db, c);
    if (!ma.empty() && !mb.empty()) EXPECT_EQ(ma, mb);
  }
}

TEST(Synthetic, VideoInvariants) {
  const auto ds = generate_synthetic(small_config());
  for (const auto& v : ds.videos) {
    ASSERT_TRUE(v.gt_segments);
    double s = 0;
    for (double y : v.video_label) s += y;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(v.video_label.back(), 0.0);
    std::set<int> seen;
    for (const auto& g : *v.gt_segments) {
      EXPECT_GE(g.start, 0);
      EXPECT_LT(g.start, g.end);
      EXPECT_LE(g.end, static_cast<int>(v.length()));
      EXPECT_GE(g.cls, 1);
      EXPECT_LE(g.cls, 5);
      seen.insert(g.cls);
    }
    EXPECT_EQ(std::vector<int>(seen.begin(), seen.end()), v.classes);
  }
}

TEST(Synthetic, SegmentsDoNotOverlap) {
  const auto ds = generate_synthetic(small_config(3));
  for (const auto& v : ds.videos) {
    auto g = *v.gt_segments;
    std::sort(g.begin(), g.end(), [](const GtSegment& a, const GtSegment& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LE(g[i - 1].end, g[i].start);
  }
}

TEST(Synthetic, BucketHistogramPassesChiSquare) {
  auto c = small_config();
  c.num_videos = 200;
  GenerationReport r;
  const auto ds = generate_synthetic(c, &r);
  EXPECT_TRUE(r.consistent) << "chi-square " << r.chi_square << " > " << r.critical_value;
  std::array<int, 5> counted{};
  for (const auto& v : ds.videos)
    for (const auto& g : *v.gt_segments) ++counted[bucket_of_snippets(g.duration(), ds.snippet_seconds)];
  EXPECT_EQ(counted, r.bucket_counts);
  for (int n : counted) EXPECT_GT(n, 0);
}

TEST(Synthetic, NearestMeanClassifierSeparatesActionSnippets) {
  auto c = small_config(17);
  c.num_videos = 60;
  c.separation = 4.0;
  c.noise = 1.0;
  const auto ds = generate_synthetic(c);
  std::mt19937_64 class_rng(c.class_seed);
  const auto means = synthetic_class_means(c, class_rng);
  int correct = 0, total = 0;
  for (const auto& v : ds.videos)
    for (const auto& g : *v.gt_segments)
      for (int t = g.start; t < g.end; ++t) {
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < c.num_classes; ++k) {
          double d = 0;
          for (int j = 0; j < c.feature_dim; ++j) d += std::pow(v.features(t, j) - means[k][j], 2);
          if (d < best_d) {
            best_d = d;
            best = k + 1;
          }
        }
        correct += best == g.cls;
        ++total;
      }
  EXPECT_GT(static_cast<double>(correct) / total, 0.95);
}

TEST(Synthetic, UnpackableSegmentsRaiseGenerationError) {
  SyntheticConfig c;
  c.num_videos = 1;
  c.t_min = c.t_max = 10;
  c.segments_min = c.segments_max = 4;
  c.bucket_weights = {0, 0, 0, 0, 1};
  EXPECT_THROW(generate_synthetic(c), GenerationError);
}

TEST(Buckets, SnippetRangesFollowTheCeilingRule) {
  const double dt = 16.0 / 25.0;
  EXPECT_EQ(bucket_snippet_range(0, dt, 12.0), (std::pair<int, int>{1, 1}));  // 0.64 s
  EXPECT_EQ(bucket_snippet_range(1, dt, 12.0), (std::pair<int, int>{2, 3}));  // 1.28 to 1.92 s
  EXPECT_EQ(bucket_of_snippets(1, dt), 0u);
  EXPECT_EQ(bucket_of_snippets(3, dt), 1u);
  EXPECT_EQ(bucket_of_snippets(4, dt), 2u);
}

TEST(FeatureFile, RoundTripIsFloat32Exact) {
  std::mt19937_64 rng(1);
  const auto m = asmloc::testing::random_matrix(rng, 7, 3);
  const auto dir = scratch("roundtrip");
  write_features(dir / "f.asml", m);
  const auto back = read_features(dir / "f.asml", 3);
  ASSERT_EQ(back.rows, 7u);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(m.values[i])));
}

TEST(FeatureFile, DistinctErrorsForBadMagicDimAndTruncation) {
  const auto dir = scratch("errors");
  write_features(dir / "ok.asml", Matrix(4, 2, 1.0));
  EXPECT_THROW(read_features(dir / "ok.asml", 3), DimensionMismatchError);
  {
    std::ofstream os(dir / "magic.asml", std::ios::binary);
    os << "NOPE0000000000000000";
  }
  EXPECT_THROW(read_features(dir / "magic.asml", 2), BadMagicError);
  {
    std::ifstream in(dir / "ok.asml", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream os(dir / "short.asml", std::ios::binary);
    os << bytes.substr(0, bytes.size() - 3);
  }
  EXPECT_THROW(read_features(dir / "short.asml", 2), TruncatedFileError);
  EXPECT_THROW(read_features(dir / "absent.asml", 2), FileNotFoundError);
}

TEST(Manifest, DatasetRoundTrip) {
  const auto ds = generate_synthetic(small_config());
  const auto dir = scratch("manifest");
  const auto back = load_dataset(write_dataset(dir, ds));
  ASSERT_EQ(back.videos.size(), ds.videos.size());
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    EXPECT_EQ(back.videos[i].classes, ds.videos[i].classes);
    EXPECT_EQ(*back.videos[i].gt_segments, *ds.videos[i].gt_segments);
    EXPECT_EQ(back.videos[i].features.rows, ds.videos[i].features.rows);
  }
}

TEST(Manifest, MissingFeatureFileIsNamed) {
  const auto dir = scratch("missing");
  std::ofstream(dir / "manifest.json") << R"({"num_classes":2,"feature_dim":2,
    "videos":[{"id":"a","features":"features/gone.asml","labels":[1]}]})";
  try {
    load_manifest(dir / "manifest.json");
    FAIL() << "expected FileNotFoundError";
  } catch (const FileNotFoundError& e) {
    EXPECT_NE(std::string(e.what()).find("gone.asml"), std::string::npos);
  }
}

TEST(Manifest, HeaderDimensionMustMatch) {
  const auto dir = scratch("dim");
  write_features(dir / "a.asml", Matrix(3, 4, 0.0));
  std::ofstream(dir / "manifest.json") << R"({"num_classes":2,"feature_dim":2,
    "videos":[{"id":"a","features":"a.asml","labels":[1]}]})";
  EXPECT_THROW(load_manifest(dir / "manifest.json"), DimensionMismatchError);
}

TEST(Manifest, SecondsConvertWithFloorAndCeiling) {
  const double dt = 0.64;
  const auto g = seconds_to_snippets({1.0, 2.0, 1}, dt, 100);
  EXPECT_EQ(g.start, 1);  // floor(1.5625)
  EXPECT_EQ(g.end, 4);    // ceil(3.125)
}

TEST(Manifest, RealFeatureWidthIsAccepted) {
  const auto dir = scratch("wide");
  write_features(dir / "a.asml", Matrix(2, 2048, 0.5));
  std::ofstream(dir / "manifest.json") << R"({"num_classes":20,"feature_dim":2048,
    "videos":[{"id":"a","features":"a.asml","labels":[7]}]})";
  const auto ds = load_dataset(dir / "manifest.json");
  EXPECT_EQ(ds.videos[0].features.cols, 2048u);
}

TEST(Resize, EndpointsArePreserved) {
  Matrix f(3, 1, std::vector<double>{0, 1, 4});
  const auto r = resize_features(f, 5);
  EXPECT_EQ(r.values, (std::vector<double>{0, 0.5, 1, 2.5, 4}));
}
