#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/config.hpp"
#include "asmloc/errors.hpp"
#include "asmloc/tensor.hpp"

namespace asmloc {

/// T×D snippet features of one untrimmed video.
using FeatureSequence = Matrix;

/// Ground-truth action instance in snippet indices, half-open; class in [1, C].
struct GtSegment {
  int start = 0;
  int end = 0;
  int cls = 0;
  int duration() const { return end - start; }
  bool operator==(const GtSegment&) const = default;
};

struct VideoRecord {
  std::string id;
  FeatureSequence features;
  std::vector<int> classes;  // sorted, unique, each in [1, C]
  std::vector<double> video_label;  // length C+1, l1-normalized, background slot 0
  std::optional<std::vector<GtSegment>> gt_segments;

  std::size_t length() const { return features.rows; }
  bool operator==(const VideoRecord&) const = default;
};

struct Dataset {
  int num_classes = 0;
  int feature_dim = 0;
  double snippet_seconds = kDefaultSnippetSeconds;
  std::vector<VideoRecord> videos;

  bool operator==(const Dataset&) const = default;
};

/// Video-level targets: y_fg over C+1 slots (l1-normalized, background 0) and
/// the one-hot background label y_bg.
struct LabelPair {
  std::vector<double> fg;
  std::vector<double> bg;
};

inline LabelPair encode_labels(const std::vector<int>& classes, int num_classes) {
  if (classes.empty()) throw ContractError("encode_labels: class set is empty");
  const std::set<int> unique(classes.begin(), classes.end());
  LabelPair out{std::vector<double>(num_classes + 1, 0.0), std::vector<double>(num_classes + 1, 0.0)};
  for (int c : unique) {
    if (c < 1 || c > num_classes)
      throw ContractError("encode_labels: class " + std::to_string(c) + " outside [1, " + std::to_string(num_classes) + "]");
    out.fg[c - 1] = 1.0 / static_cast<double>(unique.size());
  }
  out.bg[num_classes] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Duration buckets

inline constexpr std::array<double, 5> kBucketLowerSeconds{0.0, 1.0, 2.0, 4.0, 6.0};

/// Inclusive snippet-count range whose duration n·dt falls in bucket b = (lo, hi].
inline std::pair<int, int> bucket_snippet_range(std::size_t b, double snippet_seconds, double xl_max_seconds) {
  const double lo = kBucketLowerSeconds.at(b);
  const double hi = b + 1 < kBucketLowerSeconds.size() ? kBucketLowerSeconds[b + 1] : xl_max_seconds;
  const int first = static_cast<int>(std::floor(lo / snippet_seconds + 1e-9)) + 1;
  const int last = static_cast<int>(std::floor(hi / snippet_seconds + 1e-9));
  return {first, last};
}

inline std::size_t bucket_of_snippets(int duration, double snippet_seconds) {
  const double seconds = duration * snippet_seconds;
  std::size_t b = 0;
  for (std::size_t i = 0; i < kBucketLowerSeconds.size(); ++i)
    if (seconds > kBucketLowerSeconds[i] + 1e-12) b = i;
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic generation

struct GenerationReport {
  std::array<int, 5> bucket_counts{};
  std::array<double, 5> expected{};
  double chi_square = 0.0;
  int degrees_of_freedom = 0;
  double critical_value = 0.0;  // alpha = 0.001
  bool consistent = true;
};

/// Class mean directions scaled to `separation`; orthonormal when D >= C.
inline std::vector<std::vector<double>> synthetic_class_means(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means;
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::vector<double> v(cfg.feature_dim);
    for (auto& x : v) x = normal(rng);
    if (cfg.feature_dim >= cfg.num_classes)
      for (const auto& u : means) {
        double dot = 0.0;
        for (int d = 0; d < cfg.feature_dim; ++d) dot += v[d] * u[d];
        for (int d = 0; d < cfg.feature_dim; ++d) v[d] -= dot * u[d];
      }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    means.push_back(v);
  }
  for (auto& m : means)
    for (auto& x : m) x *= cfg.separation;
  return means;
}

namespace detail {

inline double chi_square_critical_0001(int df) {
  static constexpr std::array<double, 5> table{0.0, 10.828, 13.816, 16.266, 18.467};
  return df >= 1 && df <= 4 ? table[df] : 0.0;
}

}  // namespace detail

/// Plants non-overlapping class segments in Gaussian background noise.
/// The same config (including seed) always yields a bit-identical dataset.
inline Dataset generate_synthetic(const SyntheticConfig& cfg, GenerationReport* report = nullptr) {
  cfg.validate();
  std::mt19937_64 class_rng(cfg.class_seed);
  const auto means = synthetic_class_means(cfg, class_rng);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::discrete_distribution<std::size_t> bucket_pick(cfg.bucket_weights.begin(), cfg.bucket_weights.end());

  std::array<std::pair<int, int>, 5> ranges{};
  for (std::size_t b = 0; b < 5; ++b) {
    ranges[b] = bucket_snippet_range(b, cfg.snippet_seconds, cfg.xl_max_seconds);
    if (cfg.bucket_weights[b] > 0 && ranges[b].first > ranges[b].second)
      throw GenerationError("bucket " + std::to_string(b) + " holds no whole-snippet duration at " +
                            std::to_string(cfg.snippet_seconds) + " s per snippet");
  }
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.feature_dim = cfg.feature_dim;
  ds.snippet_seconds = cfg.snippet_seconds;
  GenerationReport rep;

  constexpr int kMaxAttempts = 1000;
  for (int v = 0; v < cfg.num_videos; ++v) {
    int T = 0;
    std::vector<int> durations;
    std::vector<std::size_t> buckets;
    bool packed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !packed; ++attempt) {
      T = uniform(cfg.t_min, cfg.t_max);
      const int n = uniform(cfg.segments_min, cfg.segments_max);
      durations.clear();
      buckets.clear();
      for (int i = 0; i < n; ++i) {
        const auto b = bucket_pick(rng);
        buckets.push_back(b);
        durations.push_back(uniform(ranges[b].first, ranges[b].second));
      }
      int need = (n - 1) * cfg.min_gap;
      for (int d : durations) need += d;
      packed = need <= T;
    }
    if (!packed)
      throw GenerationError("video " + std::to_string(v) + ": planted segments cannot be packed into T in [" +
                            std::to_string(cfg.t_min) + ", " + std::to_string(cfg.t_max) + "]");

    const int n = static_cast<int>(durations.size());
    int free = T - (n - 1) * cfg.min_gap;
    for (int d : durations) free -= d;
    std::vector<int> cuts(n);
    for (auto& c : cuts) c = uniform(0, free);
    std::sort(cuts.begin(), cuts.end());

    // Class assignment: k distinct classes, each used at least once.
    const int k = uniform(1, std::min({cfg.classes_per_video_max, cfg.num_classes, n}));
    std::vector<int> pool(cfg.num_classes);
    for (int c = 0; c < cfg.num_classes; ++c) pool[c] = c + 1;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> seg_class(n);
    for (int i = 0; i < n; ++i) seg_class[i] = i < k ? pool[i] : pool[uniform(0, k - 1)];
    std::shuffle(seg_class.begin(), seg_class.end(), rng);

    VideoRecord rec;
    rec.id = "video_" + std::to_string(v);
    rec.features = Matrix(T, cfg.feature_dim);
    for (auto& x : rec.features.values) x = cfg.noise * normal(rng);
    std::vector<GtSegment> gt;
    int cursor = 0, prev_cut = 0;
    for (int i = 0; i < n; ++i) {
      cursor += cuts[i] - prev_cut;
      prev_cut = cuts[i];
      GtSegment s{cursor, cursor + durations[i], seg_class[i]};
      for (int t = s.start; t < s.end; ++t)
        for (int d = 0; d < cfg.feature_dim; ++d) rec.features(t, d) += means[s.cls - 1][d];
      gt.push_back(s);
      cursor = s.end + cfg.min_gap;
      ++rep.bucket_counts[buckets[i]];
    }
    std::set<int> cls(seg_class.begin(), seg_class.end());
    rec.classes.assign(cls.begin(), cls.end());
    rec.video_label = encode_labels(rec.classes, cfg.num_classes).fg;
    rec.gt_segments = std::move(gt);
    ds.videos.push_back(std::move(rec));
  }

  // Chi-square sanity check of the realized bucket histogram.
  int total = 0, used = 0;
  double wsum = 0.0;
  for (std::size_t b = 0; b < 5; ++b) {
    total += rep.bucket_counts[b];
    wsum += cfg.bucket_weights[b];
  }
  for (std::size_t b = 0; b < 5; ++b) {
    if (cfg.bucket_weights[b] <= 0) continue;
    ++used;
    rep.expected[b] = total * cfg.bucket_weights[b] / wsum;
    rep.chi_square += (rep.bucket_counts[b] - rep.expected[b]) * (rep.bucket_counts[b] - rep.expected[b]) / rep.expected[b];
  }
  rep.degrees_of_freedom = std::max(0, used - 1);
  rep.critical_value = detail::chi_square_critical_0001(rep.degrees_of_freedom);
  rep.consistent = rep.degrees_of_freedom == 0 || rep.chi_square <= rep.critical_value;
  if (report) *report = rep;
  return ds;
}

/// Linear-interpolation resize of a feature sequence to `length` rows.
inline FeatureSequence resize_features(const FeatureSequence& f, std::size_t length) {
  if (f.rows == 0 || length == 0) throw ContractError("resize_features: empty sequence");
  FeatureSequence out(length, f.cols);
  for (std::size_t i = 0; i < length; ++i) {
    const double pos = length == 1 ? 0.0 : static_cast<double>(i) * (f.rows - 1) / static_cast<double>(length - 1);
    const auto lo = std::min(static_cast<std::size_t>(pos), f.rows - 1);
    const auto hi = std::min(lo + 1, f.rows - 1);
    const double w = pos - static_cast<double>(lo);
    for (std::size_t d = 0; d < f.cols; ++d) out(i, d) = (1 - w) * f(lo, d) + w * f(hi, d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary feature files: "ASML", u32 version, u32 T, u32 D, then T·D float32, all little-endian.

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline void write_features(const std::filesystem::path& path, const FeatureSequence& f) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write feature file: " + path.string());
  os.write("ASML", 4);
  detail::put_u32(os, kFeatureFormatVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(f.rows));
  detail::put_u32(os, static_cast<std::uint32_t>(f.cols));
  for (double v : f.values) detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct FeatureHeader {
  std::uint32_t version = 0;
  std::uint32_t length = 0;
  std::uint32_t dim = 0;
};

inline FeatureHeader read_feature_header(std::istream& is, const std::string& name) {
  unsigned char h[16];
  is.read(reinterpret_cast<char*>(h), 16);
  if (is.gcount() != 16) throw TruncatedFileError(name + ": header shorter than 16 bytes");
  if (h[0] != 'A' || h[1] != 'S' || h[2] != 'M' || h[3] != 'L') throw BadMagicError(name + ": bad magic, expected ASML");
  FeatureHeader fh{detail::get_u32(h + 4), detail::get_u32(h + 8), detail::get_u32(h + 12)};
  if (fh.version != kFeatureFormatVersion)
    throw FormatError(name + ": unsupported feature format version " + std::to_string(fh.version));
  return fh;
}

/// Reads a feature file; `expected_dim` > 0 enforces the header D.
inline FeatureSequence read_features(const std::filesystem::path& path, int expected_dim = 0) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError(path.string());
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file: " + path.string());
  const auto h = read_feature_header(is, path.string());
  if (expected_dim > 0 && h.dim != static_cast<std::uint32_t>(expected_dim))
    throw DimensionMismatchError(path.string() + ": header D=" + std::to_string(h.dim) + " but manifest D=" +
                                 std::to_string(expected_dim));
  const std::size_t count = static_cast<std::size_t>(h.length) * h.dim;
  std::vector<unsigned char> raw(count * 4);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size())
    throw TruncatedFileError(path.string() + ": expected " + std::to_string(count) + " float32 values");
  FeatureSequence f(h.length, h.dim);
  for (std::size_t i = 0; i < count; ++i) f.values[i] = std::bit_cast<float>(detail::get_u32(raw.data() + 4 * i));
  return f;
}

// ---------------------------------------------------------------------------
// JSON manifest

struct ManifestSegment {
  double start_seconds = 0.0;
  double end_seconds = 0.0;
  int cls = 0;
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path features;  // resolved against the manifest directory
  std::vector<int> classes;
  std::optional<std::vector<ManifestSegment>> segments;
};

struct DatasetManifest {
  int num_classes = 0;
  int feature_dim = 0;
  double snippet_seconds = kDefaultSnippetSeconds;
  std::vector<ManifestEntry> videos;
};

/// Seconds → half-open snippet interval: floor of the start, ceiling of the end.
inline GtSegment seconds_to_snippets(const ManifestSegment& s, double snippet_seconds, std::size_t T) {
  int start = static_cast<int>(std::floor(s.start_seconds / snippet_seconds + 1e-9));
  int end = static_cast<int>(std::ceil(s.end_seconds / snippet_seconds - 1e-9));
  start = std::clamp(start, 0, static_cast<int>(T) - 1);
  end = std::clamp(end, start + 1, static_cast<int>(T));
  return {start, end, s.cls};
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError(path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    m.num_classes = j.at("num_classes").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.snippet_seconds = j.value("snippet_seconds", kDefaultSnippetSeconds);
    const auto base = path.parent_path();
    for (const auto& v : j.at("videos")) {
      ManifestEntry e;
      e.id = v.at("id").get<std::string>();
      e.features = base / v.at("features").get<std::string>();
      e.classes = v.at("labels").get<std::vector<int>>();
      if (v.contains("segments")) {
        std::vector<ManifestSegment> segs;
        for (const auto& s : v.at("segments"))
          segs.push_back({s.at("start").get<double>(), s.at("end").get<double>(), s.at("label").get<int>()});
        e.segments = std::move(segs);
      }
      m.videos.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (m.num_classes < 1) throw FormatError("manifest " + path.string() + ": num_classes must be >= 1");
  if (m.feature_dim < 1) throw FormatError("manifest " + path.string() + ": feature_dim must be >= 1");
  for (const auto& e : m.videos) {
    if (!std::filesystem::exists(e.features)) throw FileNotFoundError(e.features.string());
    std::ifstream fs(e.features, std::ios::binary);
    const auto h = read_feature_header(fs, e.features.string());
    if (h.dim != static_cast<std::uint32_t>(m.feature_dim))
      throw DimensionMismatchError(e.features.string() + ": header D=" + std::to_string(h.dim) + " but manifest D=" +
                                   std::to_string(m.feature_dim));
    auto check_class = [&](int c) {
      if (c < 1 || c > m.num_classes)
        throw FormatError("manifest video '" + e.id + "': class " + std::to_string(c) + " outside [1, " +
                          std::to_string(m.num_classes) + "]");
    };
    if (e.classes.empty()) throw FormatError("manifest video '" + e.id + "': empty label set");
    for (int c : e.classes) check_class(c);
    if (e.segments)
      for (const auto& s : *e.segments) {
        check_class(s.cls);
        if (!(s.end_seconds > s.start_seconds) || s.start_seconds < 0)
          throw FormatError("manifest video '" + e.id + "': segment must satisfy 0 <= start < end");
      }
  }
  return m;
}

inline FeatureSequence load_features(const ManifestEntry& entry, int feature_dim) {
  return read_features(entry.features, feature_dim);
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto m = load_manifest(manifest_path);
  Dataset ds;
  ds.num_classes = m.num_classes;
  ds.feature_dim = m.feature_dim;
  ds.snippet_seconds = m.snippet_seconds;
  for (const auto& e : m.videos) {
    VideoRecord r;
    r.id = e.id;
    r.features = load_features(e, m.feature_dim);
    if (r.features.rows == 0) throw FormatError(e.features.string() + ": video has no snippets");
    std::set<int> cls(e.classes.begin(), e.classes.end());
    r.classes.assign(cls.begin(), cls.end());
    r.video_label = encode_labels(r.classes, m.num_classes).fg;
    if (e.segments) {
      std::vector<GtSegment> gt;
      for (const auto& s : *e.segments) gt.push_back(seconds_to_snippets(s, m.snippet_seconds, r.features.rows));
      r.gt_segments = std::move(gt);
    }
    ds.videos.push_back(std::move(r));
  }
  return ds;
}

/// Writes `<dir>/manifest.json` and `<dir>/features/<id>.asml`.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "features");
  nlohmann::json j;
  j["num_classes"] = ds.num_classes;
  j["feature_dim"] = ds.feature_dim;
  j["snippet_seconds"] = ds.snippet_seconds;
  j["videos"] = nlohmann::json::array();
  for (const auto& v : ds.videos) {
    const auto rel = std::filesystem::path("features") / (v.id + ".asml");
    write_features(dir / rel, v.features);
    nlohmann::json e{{"id", v.id}, {"features", rel.generic_string()}, {"labels", v.classes}};
    if (v.gt_segments) {
      e["segments"] = nlohmann::json::array();
      for (const auto& s : *v.gt_segments)
        e["segments"].push_back(
            {{"start", s.start * ds.snippet_seconds}, {"end", s.end * ds.snippet_seconds}, {"label", s.cls}});
    }
    j["videos"].push_back(e);
  }
  const auto path = dir / "manifest.json";
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  return path;
}

}  // namespace asmloc
