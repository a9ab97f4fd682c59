#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/adam.hpp"
#include "asmloc/errors.hpp"

namespace asmloc {

using nlohmann::json;

/// Seconds per snippet: 16 frames at 25 fps.
inline constexpr double kDefaultSnippetSeconds = 16.0 / 25.0;

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

struct ModelConfig {
  int num_classes = 20;
  int feature_dim = 2048;
  int embed_dim = 2048;
  int kernel_width = 3;
  int topk_divisor = 8;  // k = max(1, ceil(T / r))
  int heads = 8;
  double lambda_fg = 1.0;
  double lambda_bg = 0.5;
  double lambda_abg = 0.5;
  double lambda_ins = 0.05;  // weight of L_ins; unstated upstream
  double beta = 0.2;
  double gamma = 6.0;
  std::string gamma_unit = "snippets";
  double alpha = 0.7;
  double delta = 0.5;
  int attention_depth = 1;
  bool use_dss = true;
  bool use_intra = true;
  bool use_inter = true;
  bool use_ins = true;
  // Test-time: resample with proposals and map outputs back to the original timeline.
  bool dss_at_inference = true;
  bool regenerate_with_context = false;
  double bn_eps = 1e-5;
  double init_scale = 1.0;

  int cas_width() const { return num_classes + 1; }
  int background_index() const { return num_classes; }

  std::size_t topk(std::size_t T) const {
    const auto r = static_cast<std::size_t>(topk_divisor);
    return std::max<std::size_t>(1, (T + r - 1) / r);
  }

  void validate(const std::string& prefix = "model") const {
    auto field = [&](const char* f) { return prefix + "." + f; };
    if (num_classes < 1) throw ValidationError(field("C"), "must be >= 1");
    if (feature_dim < 1) throw ValidationError(field("D"), "must be >= 1");
    if (embed_dim < 1) throw ValidationError(field("embed_dim"), "must be >= 1");
    if (kernel_width < 1 || kernel_width % 2 == 0) throw ValidationError(field("kernel_width"), "must be odd and >= 1");
    if (topk_divisor < 1) throw ValidationError(field("r"), "must be >= 1");
    if (heads < 1 || embed_dim % heads != 0) throw ValidationError(field("H"), "must divide embed_dim");
    if (lambda_fg < 0) throw ValidationError(field("lambda_fg"), "must be >= 0");
    if (lambda_bg < 0) throw ValidationError(field("lambda_bg"), "must be >= 0");
    if (lambda_abg < 0) throw ValidationError(field("lambda_abg"), "must be >= 0");
    if (lambda_ins < 0) throw ValidationError(field("lambda_ins"), "must be >= 0");
    if (beta < 0) throw ValidationError(field("beta"), "must be >= 0");
    if (!(gamma >= 1)) throw ValidationError(field("gamma"), "must be >= 1");
    if (gamma_unit != "snippets") throw ValidationError(field("gamma_unit"), "only 'snippets' is supported");
    if (!(alpha > 0 && alpha <= 1)) throw ValidationError(field("alpha"), "must lie in (0, 1]");
    if (!(delta >= 0)) throw ValidationError(field("delta"), "must be >= 0");
    if (attention_depth < 1) throw ValidationError(field("attention_depth"), "must be >= 1");
    if (!(init_scale > 0)) throw ValidationError(field("init_scale"), "must be > 0");
  }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"C", c.num_classes},
           {"D", c.feature_dim},
           {"embed_dim", c.embed_dim},
           {"kernel_width", c.kernel_width},
           {"r", c.topk_divisor},
           {"H", c.heads},
           {"lambda_fg", c.lambda_fg},
           {"lambda_bg", c.lambda_bg},
           {"lambda_abg", c.lambda_abg},
           {"lambda_ins", c.lambda_ins},
           {"beta", c.beta},
           {"gamma", c.gamma},
           {"gamma_unit", c.gamma_unit},
           {"alpha", c.alpha},
           {"delta", c.delta},
           {"attention_depth", c.attention_depth},
           {"use_dss", c.use_dss},
           {"use_intra", c.use_intra},
           {"use_inter", c.use_inter},
           {"use_ins", c.use_ins},
           {"dss_at_inference", c.dss_at_inference},
           {"regenerate_with_context", c.regenerate_with_context},
           {"bn_eps", c.bn_eps},
           {"init_scale", c.init_scale}};
}

inline void from_json(const json& j, ModelConfig& c) {
  using detail::read_opt;
  read_opt(j, "C", c.num_classes);
  read_opt(j, "D", c.feature_dim);
  // Embedding width follows D unless given.
  if (j.contains("D") && !j.contains("embed_dim")) c.embed_dim = c.feature_dim;
  read_opt(j, "embed_dim", c.embed_dim);
  read_opt(j, "kernel_width", c.kernel_width);
  read_opt(j, "r", c.topk_divisor);
  read_opt(j, "H", c.heads);
  read_opt(j, "lambda_fg", c.lambda_fg);
  read_opt(j, "lambda_bg", c.lambda_bg);
  read_opt(j, "lambda_abg", c.lambda_abg);
  read_opt(j, "lambda_ins", c.lambda_ins);
  read_opt(j, "beta", c.beta);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "gamma_unit", c.gamma_unit);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "delta", c.delta);
  read_opt(j, "attention_depth", c.attention_depth);
  read_opt(j, "use_dss", c.use_dss);
  read_opt(j, "use_intra", c.use_intra);
  read_opt(j, "use_inter", c.use_inter);
  read_opt(j, "use_ins", c.use_ins);
  read_opt(j, "dss_at_inference", c.dss_at_inference);
  read_opt(j, "regenerate_with_context", c.regenerate_with_context);
  read_opt(j, "bn_eps", c.bn_eps);
  read_opt(j, "init_scale", c.init_scale);
}

/// Dataset-profile presets.
inline ModelConfig thumos_model_config() { return ModelConfig{}; }

inline ModelConfig activitynet_model_config() {
  ModelConfig c;
  c.num_classes = 200;
  c.lambda_fg = 5.0;
  c.gamma = 10.0;
  c.delta = 0.0;
  c.alpha = 0.3;
  return c;
}

struct EvalConfig {
  std::vector<double> iou_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double sweep_start = 0.1;
  double sweep_stop = 0.9;
  double sweep_step = 0.025;
  double nms_iou = 0.45;
  double class_threshold = 0.1;
  // Duration bucket lower edges in seconds; bucket i is (edges[i], edges[i+1]], the last is open.
  std::vector<double> bucket_edges{0.0, 1.0, 2.0, 4.0, 6.0};
  std::vector<std::string> bucket_names{"XS", "S", "M", "L", "XL"};

  std::vector<double> sweep() const {
    std::vector<double> out;
    for (int i = 0;; ++i) {
      const double v = sweep_start + i * sweep_step;
      if (v > sweep_stop + 1e-9) break;
      out.push_back(std::round(v * 1e9) / 1e9);
    }
    return out;
  }

  std::size_t bucket_of(double seconds) const {
    std::size_t b = 0;
    for (std::size_t i = 0; i < bucket_edges.size(); ++i)
      if (seconds > bucket_edges[i]) b = i;
    return b;
  }

  void validate(const std::string& prefix = "eval") const {
    auto field = [&](const char* f) { return prefix + "." + f; };
    if (iou_thresholds.empty()) throw ValidationError(field("iou_thresholds"), "must not be empty");
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      if (!(iou_thresholds[i] > 0 && iou_thresholds[i] <= 1))
        throw ValidationError(field("iou_thresholds"), "values must lie in (0, 1]");
      if (i && !(iou_thresholds[i] > iou_thresholds[i - 1]))
        throw ValidationError(field("iou_thresholds"), "must be strictly increasing");
    }
    if (!(sweep_step > 0)) throw ValidationError(field("sweep.step"), "must be > 0");
    if (!(sweep_start > 0 && sweep_start < 1)) throw ValidationError(field("sweep.start"), "must lie in (0, 1)");
    if (!(sweep_stop >= sweep_start && sweep_stop < 1)) throw ValidationError(field("sweep.stop"), "must lie in [start, 1)");
    if (!(nms_iou > 0 && nms_iou < 1)) throw ValidationError(field("nms_iou"), "must lie in (0, 1)");
    if (!(class_threshold >= 0 && class_threshold < 1)) throw ValidationError(field("class_threshold"), "must lie in [0, 1)");
    if (bucket_edges.empty() || bucket_edges[0] != 0.0) throw ValidationError(field("bucket_edges"), "must start at 0");
    for (std::size_t i = 1; i < bucket_edges.size(); ++i)
      if (!(bucket_edges[i] > bucket_edges[i - 1]))
        throw ValidationError(field("bucket_edges"), "must be strictly increasing");
    if (bucket_names.size() != bucket_edges.size())
      throw ValidationError(field("bucket_names"), "needs one name per bucket edge");
  }
};

inline EvalConfig thumos_eval_config() { return EvalConfig{}; }

inline EvalConfig activitynet_eval_config() {
  EvalConfig c;
  c.iou_thresholds.clear();
  for (int i = 0; i < 10; ++i) c.iou_thresholds.push_back(std::round((0.5 + 0.05 * i) * 100) / 100);
  c.sweep_start = 0.005;
  c.sweep_stop = 0.02;
  c.sweep_step = 0.005;
  c.nms_iou = 0.9;
  return c;
}

inline void to_json(json& j, const EvalConfig& c) {
  j = json{{"iou_thresholds", c.iou_thresholds},
           {"sweep", {{"start", c.sweep_start}, {"stop", c.sweep_stop}, {"step", c.sweep_step}}},
           {"nms_iou", c.nms_iou},
           {"class_threshold", c.class_threshold},
           {"bucket_edges", c.bucket_edges},
           {"bucket_names", c.bucket_names}};
}

inline void from_json(const json& j, EvalConfig& c) {
  using detail::read_opt;
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "thumos")
      c = thumos_eval_config();
    else if (p == "activitynet")
      c = activitynet_eval_config();
    else
      throw ValidationError("eval.profile", "unknown profile '" + p + "'");
  }
  read_opt(j, "iou_thresholds", c.iou_thresholds);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    read_opt(s, "start", c.sweep_start);
    read_opt(s, "stop", c.sweep_stop);
    read_opt(s, "step", c.sweep_step);
  }
  read_opt(j, "nms_iou", c.nms_iou);
  read_opt(j, "class_threshold", c.class_threshold);
  read_opt(j, "bucket_edges", c.bucket_edges);
  read_opt(j, "bucket_names", c.bucket_names);
}

struct RefinementSchedule {
  int epochs_per_step = 100;  // E
  int steps = 3;              // L
  // Final phase: train until the epoch loss fails to improve by `min_delta`
  // (relative) for `patience` epochs, or `max_final_epochs` is reached.
  int patience = 5;
  double min_delta = 1e-3;
  int max_final_epochs = 100;

  void validate(const std::string& prefix = "schedule") const {
    if (epochs_per_step < 1) throw ValidationError(prefix + ".E", "must be >= 1");
    if (steps < 0) throw ValidationError(prefix + ".L", "must be >= 0");
    if (patience < 1) throw ValidationError(prefix + ".patience", "must be >= 1");
    if (max_final_epochs < 0) throw ValidationError(prefix + ".max_final_epochs", "must be >= 0");
    if (!(min_delta >= 0)) throw ValidationError(prefix + ".min_delta", "must be >= 0");
  }
};

inline void to_json(json& j, const RefinementSchedule& s) {
  j = json{{"E", s.epochs_per_step},
           {"L", s.steps},
           {"patience", s.patience},
           {"min_delta", s.min_delta},
           {"max_final_epochs", s.max_final_epochs}};
}

inline void from_json(const json& j, RefinementSchedule& s) {
  using detail::read_opt;
  read_opt(j, "E", s.epochs_per_step);
  read_opt(j, "L", s.steps);
  read_opt(j, "patience", s.patience);
  read_opt(j, "min_delta", s.min_delta);
  read_opt(j, "max_final_epochs", s.max_final_epochs);
}

struct OptimizerConfig {
  AdamConfig adam;
  int batch_size = 16;

  void validate(const std::string& prefix = "optimizer") const {
    if (!(adam.lr > 0)) throw ValidationError(prefix + ".lr", "must be > 0");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1)) throw ValidationError(prefix + ".beta1", "must lie in [0, 1)");
    if (!(adam.beta2 >= 0 && adam.beta2 < 1)) throw ValidationError(prefix + ".beta2", "must lie in [0, 1)");
    if (!(adam.eps > 0)) throw ValidationError(prefix + ".eps", "must be > 0");
    if (batch_size < 1) throw ValidationError(prefix + ".batch_size", "must be >= 1");
  }
};

inline void to_json(json& j, const OptimizerConfig& o) {
  j = json{{"lr", o.adam.lr},
           {"beta1", o.adam.beta1},
           {"beta2", o.adam.beta2},
           {"eps", o.adam.eps},
           {"batch_size", o.batch_size}};
}

inline void from_json(const json& j, OptimizerConfig& o) {
  using detail::read_opt;
  read_opt(j, "lr", o.adam.lr);
  read_opt(j, "beta1", o.adam.beta1);
  read_opt(j, "beta2", o.adam.beta2);
  read_opt(j, "eps", o.adam.eps);
  read_opt(j, "batch_size", o.batch_size);
}

/// Generator settings for synthetic untrimmed videos.
struct SyntheticConfig {
  int num_classes = 5;
  int feature_dim = 16;
  int num_videos = 100;
  int t_min = 40;
  int t_max = 120;
  int segments_min = 1;
  int segments_max = 4;
  int classes_per_video_max = 2;
  // Relative frequency of the XS, S, M, L, XL duration buckets.
  std::vector<double> bucket_weights{1.0, 1.0, 1.0, 1.0, 1.0};
  double xl_max_seconds = 12.0;
  double separation = 4.0;
  double noise = 1.0;
  double snippet_seconds = kDefaultSnippetSeconds;
  int min_gap = 1;  // background snippets kept between planted segments
  std::uint64_t seed = 0;
  // Class means come from their own stream, so train and test sets drawn with
  // different seeds share one class geometry.
  std::uint64_t class_seed = 0;

  void validate(const std::string& prefix = "synthetic") const {
    auto field = [&](const char* f) { return prefix + "." + f; };
    if (num_classes < 1) throw ValidationError(field("C"), "must be >= 1");
    if (feature_dim < 1) throw ValidationError(field("D"), "must be >= 1");
    if (num_videos < 1) throw ValidationError(field("num_videos"), "must be >= 1");
    if (t_min < 1 || t_max < t_min) throw ValidationError(field("T"), "range must be non-empty with T >= 1");
    if (segments_min < 1 || segments_max < segments_min)
      throw ValidationError(field("segments"), "range must be non-empty with at least one segment");
    if (classes_per_video_max < 1) throw ValidationError(field("classes_per_video_max"), "must be >= 1");
    if (bucket_weights.size() != 5) throw ValidationError(field("bucket_weights"), "needs 5 entries (XS..XL)");
    double total = 0;
    for (double w : bucket_weights) {
      if (!(w >= 0)) throw ValidationError(field("bucket_weights"), "must be non-negative");
      total += w;
    }
    if (!(total > 0)) throw ValidationError(field("bucket_weights"), "must not all be zero");
    if (!(noise >= 0)) throw ValidationError(field("noise"), "must be >= 0");
    if (!(separation >= 0)) throw ValidationError(field("separation"), "must be >= 0");
    if (!(snippet_seconds > 0)) throw ValidationError(field("snippet_seconds"), "must be > 0");
    if (!(xl_max_seconds > 6.0)) throw ValidationError(field("xl_max_seconds"), "must exceed 6 s");
    if (min_gap < 0) throw ValidationError(field("min_gap"), "must be >= 0");
  }
};

inline void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"C", c.num_classes},
           {"D", c.feature_dim},
           {"num_videos", c.num_videos},
           {"t_min", c.t_min},
           {"t_max", c.t_max},
           {"segments_min", c.segments_min},
           {"segments_max", c.segments_max},
           {"classes_per_video_max", c.classes_per_video_max},
           {"bucket_weights", c.bucket_weights},
           {"xl_max_seconds", c.xl_max_seconds},
           {"separation", c.separation},
           {"noise", c.noise},
           {"snippet_seconds", c.snippet_seconds},
           {"min_gap", c.min_gap},
           {"seed", c.seed},
           {"class_seed", c.class_seed}};
}

inline void from_json(const json& j, SyntheticConfig& c) {
  using detail::read_opt;
  read_opt(j, "C", c.num_classes);
  read_opt(j, "D", c.feature_dim);
  read_opt(j, "num_videos", c.num_videos);
  read_opt(j, "t_min", c.t_min);
  read_opt(j, "t_max", c.t_max);
  read_opt(j, "segments_min", c.segments_min);
  read_opt(j, "segments_max", c.segments_max);
  read_opt(j, "classes_per_video_max", c.classes_per_video_max);
  read_opt(j, "bucket_weights", c.bucket_weights);
  read_opt(j, "xl_max_seconds", c.xl_max_seconds);
  read_opt(j, "separation", c.separation);
  read_opt(j, "noise", c.noise);
  read_opt(j, "snippet_seconds", c.snippet_seconds);
  read_opt(j, "min_gap", c.min_gap);
  read_opt(j, "seed", c.seed);
  read_opt(j, "class_seed", c.class_seed);
}

}  // namespace asmloc
