#pragma once

// Run configuration and the train / eval / gradcheck commands behind the CLI.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asmloc/checkpoint.hpp"
#include "asmloc/config.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/evaluation.hpp"
#include "asmloc/gradcheck.hpp"
#include "asmloc/pipeline.hpp"
#include "asmloc/training.hpp"

namespace asmloc {

namespace fs = std::filesystem;

struct DataConfig {
  std::string manifest;  // training manifest; synthetic data when empty
  std::optional<SyntheticConfig> synthetic;
  std::string test_manifest;
  std::optional<SyntheticConfig> test_synthetic;
  int fixed_T = 0;  // > 0: training videos resampled to this length

  void validate(const std::string& prefix = "data") const {
    if (manifest.empty() && !synthetic) throw ValidationError(prefix + ".manifest", "give a manifest or a synthetic config");
    if (!manifest.empty() && synthetic)
      throw ValidationError(prefix + ".synthetic", "conflicts with data.manifest; give one of them");
    if (!test_manifest.empty() && test_synthetic)
      throw ValidationError(prefix + ".test_synthetic", "conflicts with data.test_manifest");
    if (synthetic) synthetic->validate(prefix + ".synthetic");
    if (test_synthetic) test_synthetic->validate(prefix + ".test_synthetic");
    if (fixed_T < 0) throw ValidationError(prefix + ".fixed_T", "must be >= 0");
  }
};

struct GradcheckConfig {
  int T = 12;
  int videos = 2;
  double tolerance = 1e-4;
  double step = 1e-5;
  double floor = 1e-6;

  void validate(const std::string& prefix = "gradcheck") const {
    if (T < 2 || T > 16) throw ValidationError(prefix + ".T", "must lie in [2, 16]");
    if (videos < 1) throw ValidationError(prefix + ".videos", "must be >= 1");
    if (!(tolerance > 0)) throw ValidationError(prefix + ".tolerance", "must be > 0");
    if (!(step > 0)) throw ValidationError(prefix + ".step", "must be > 0");
    if (!(floor > 0)) throw ValidationError(prefix + ".floor", "must be > 0");
  }
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  RefinementSchedule schedule;
  EvalConfig eval;
  OptimizerConfig optimizer;
  GradcheckConfig gradcheck;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  bool eval_each_step = true;
  bool save_detections = false;

  void validate() const {
    data.validate();
    model.validate();
    schedule.validate();
    eval.validate();
    optimizer.validate();
    gradcheck.validate();
    if (output_dir.empty()) throw ValidationError("output_dir", "must not be empty");
    if (data.synthetic) {
      if (data.synthetic->num_classes != model.num_classes)
        throw ValidationError("model.C", "differs from data.synthetic.C");
      if (data.synthetic->feature_dim != model.feature_dim)
        throw ValidationError("model.D", "differs from data.synthetic.D");
    }
  }
};

inline void to_json(json& j, const DataConfig& d) {
  j = json::object();
  if (!d.manifest.empty()) j["manifest"] = d.manifest;
  if (d.synthetic) j["synthetic"] = *d.synthetic;
  if (!d.test_manifest.empty()) j["test_manifest"] = d.test_manifest;
  if (d.test_synthetic) j["test_synthetic"] = *d.test_synthetic;
  j["fixed_T"] = d.fixed_T;
}

inline void from_json(const json& j, DataConfig& d) {
  detail::read_opt(j, "manifest", d.manifest);
  if (j.contains("synthetic")) d.synthetic = j.at("synthetic").get<SyntheticConfig>();
  detail::read_opt(j, "test_manifest", d.test_manifest);
  if (j.contains("test_synthetic")) d.test_synthetic = j.at("test_synthetic").get<SyntheticConfig>();
  detail::read_opt(j, "fixed_T", d.fixed_T);
}

inline void to_json(json& j, const GradcheckConfig& g) {
  j = json{{"T", g.T}, {"videos", g.videos}, {"tolerance", g.tolerance}, {"step", g.step}, {"floor", g.floor}};
}

inline void from_json(const json& j, GradcheckConfig& g) {
  using detail::read_opt;
  read_opt(j, "T", g.T);
  read_opt(j, "videos", g.videos);
  read_opt(j, "tolerance", g.tolerance);
  read_opt(j, "step", g.step);
  read_opt(j, "floor", g.floor);
}

inline void to_json(json& j, const RunConfig& r) {
  j = json{{"data", r.data},
           {"model", r.model},
           {"schedule", r.schedule},
           {"eval", r.eval},
           {"optimizer", r.optimizer},
           {"gradcheck", r.gradcheck},
           {"seed", r.seed},
           {"output_dir", r.output_dir},
           {"eval_each_step", r.eval_each_step},
           {"save_detections", r.save_detections}};
}

/// Unknown top-level keys are rejected. C and D default to the synthetic data's.
inline void from_json(const json& j, RunConfig& r) {
  static const std::set<std::string> known{"data",     "model", "schedule",  "eval",           "optimizer",
                                           "gradcheck", "seed",  "output_dir", "eval_each_step", "save_detections"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ValidationError(it.key(), "unknown configuration key");
  if (j.contains("data")) r.data = j.at("data").get<DataConfig>();
  json model = j.value("model", json::object());
  if (r.data.synthetic) {
    if (!model.contains("C")) model["C"] = r.data.synthetic->num_classes;
    if (!model.contains("D")) model["D"] = r.data.synthetic->feature_dim;
  }
  from_json(model, r.model);
  if (j.contains("schedule")) from_json(j.at("schedule"), r.schedule);
  if (j.contains("eval")) from_json(j.at("eval"), r.eval);
  if (j.contains("optimizer")) from_json(j.at("optimizer"), r.optimizer);
  if (j.contains("gradcheck")) from_json(j.at("gradcheck"), r.gradcheck);
  detail::read_opt(j, "seed", r.seed);
  detail::read_opt(j, "output_dir", r.output_dir);
  detail::read_opt(j, "eval_each_step", r.eval_each_step);
  detail::read_opt(j, "save_detections", r.save_detections);
}

/// Parses a JSON config, applies `path.to.key=value` overrides, then validates.
/// Override values are parsed as JSON when possible, else taken as strings.
inline RunConfig parse_run_config(json j, const std::vector<std::string>& overrides = {}) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(o, "override must look like key.path=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    std::string ptr;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) ptr += "/" + part;
    j[json::json_pointer(ptr)] = value;
  }
  RunConfig r;
  try {
    r = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ValidationError("config", e.what());
  }
  r.validate();
  return r;
}

inline json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw FileNotFoundError(path.string());
  std::ifstream in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
  return j;
}

inline void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// ASMLOC_OUTPUT_DIR, when set and non-empty, replaces the configured directory.
inline fs::path resolve_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("ASMLOC_OUTPUT_DIR"); env && *env) return fs::path(env);
  return fs::path(cfg.output_dir);
}

/// Synthetic sets are written under `dir` and read back, so training sees the
/// same float32 values as any later replay from disk.
inline Dataset materialize(const SyntheticConfig& syn, const fs::path& dir) {
  return load_dataset(write_dataset(dir, generate_synthetic(syn)));
}

struct RunData {
  Dataset train;
  std::optional<Dataset> test;
  fs::path train_manifest;
  fs::path test_manifest;
};

inline RunData prepare_data(const RunConfig& cfg, const fs::path& out) {
  RunData d;
  if (cfg.data.synthetic) {
    d.train = materialize(*cfg.data.synthetic, out / "data" / "train");
    d.train_manifest = out / "data" / "train" / "manifest.json";
  } else {
    d.train_manifest = cfg.data.manifest;
    d.train = load_dataset(d.train_manifest);
  }
  if (cfg.data.test_synthetic) {
    d.test = materialize(*cfg.data.test_synthetic, out / "data" / "test");
    d.test_manifest = out / "data" / "test" / "manifest.json";
  } else if (!cfg.data.test_manifest.empty()) {
    d.test_manifest = cfg.data.test_manifest;
    d.test = load_dataset(d.test_manifest);
  }
  for (const Dataset* ds : {&d.train, d.test ? &*d.test : nullptr}) {
    if (!ds) continue;
    if (ds->num_classes != cfg.model.num_classes) throw ValidationError("model.C", "differs from the dataset's class count");
    if (ds->feature_dim != cfg.model.feature_dim) throw ValidationError("model.D", "differs from the dataset's feature dim");
  }
  return d;
}

/// Training copy with every video resampled to T snippets; GT scaled alongside.
inline Dataset fixed_length_copy(const Dataset& ds, int T) {
  Dataset out = ds;
  for (auto& v : out.videos) {
    const double ratio = static_cast<double>(T) / static_cast<double>(v.length());
    v.features = resize_features(v.features, static_cast<std::size_t>(T));
    if (v.gt_segments)
      for (auto& g : *v.gt_segments) {
        g.start = std::min(T - 1, static_cast<int>(std::floor(g.start * ratio)));
        g.end = std::max(g.start + 1, std::min(T, static_cast<int>(std::ceil(g.end * ratio))));
      }
  }
  return out;
}

inline json checkpoint_meta(const RunConfig& cfg, bool with_segments, int step) {
  return json{{"model", cfg.model}, {"with_segments", with_segments}, {"seed", cfg.seed}, {"step", step}};
}

struct TrainOutcome {
  fs::path output_dir;
  fs::path final_checkpoint;
  RefineResult refine;
  DetectionResult train_result;
  std::optional<DetectionResult> test_result;
  json metrics;
};

namespace detail {

inline const char* kAdamFirst = "adam.m/";
inline const char* kAdamSecond = "adam.v/";

inline ParameterStore resume_store(const ParameterStore& params, const AdamState* adam) {
  ParameterStore out = params.clone();
  for (const auto& [name, t] : params) {
    auto moment = [&](const std::map<std::string, std::vector<double>>& m) {
      std::vector<double> v(t.size(), 0.0);
      if (adam)
        if (auto it = m.find(name); it != m.end() && it->second.size() == t.size()) v = it->second;
      return Tensor::from(t.shape(), std::move(v), true);
    };
    out.add(kAdamFirst + name, moment(adam ? adam->first_moment : std::map<std::string, std::vector<double>>{}));
    out.add(kAdamSecond + name, moment(adam ? adam->second_moment : std::map<std::string, std::vector<double>>{}));
  }
  return out;
}

}  // namespace detail

/// Exact training state after a step: float64 parameters and Adam moments in
/// `<stem>.state.{json,bin}`, with the epoch log and step metrics in its meta.
inline void save_resume_state(const fs::path& stem, const ParameterStore& params, const RefineState& st,
                              const json& steps) {
  json meta{{"step", st.step},          {"epoch", st.epoch},     {"adam_step", st.adam.step},
            {"history", st.history},    {"proposal_iou", st.proposal_iou}, {"steps", steps},
            {"proposals", proposals_json(st.proposals)}};
  save_checkpoint(fs::path(stem.string() + ".state"), detail::resume_store(params, &st.adam), meta, Dtype::Float64);
}

struct ResumePoint {
  RefineState state;
  json steps;
};

/// Fills `params` (already shaped for the run's model) and returns the state.
inline ResumePoint load_resume_state(const fs::path& stem, ParameterStore& params) {
  fs::path path = stem;
  if (path.extension() == ".json") path.replace_extension();
  if (path.extension() != ".state") path = fs::path(path.string() + ".state");
  ParameterStore all = detail::resume_store(params, nullptr);
  const json meta = load_checkpoint(path, all);
  ResumePoint r;
  r.state.step = meta.at("step").get<int>();
  r.state.epoch = meta.at("epoch").get<int>();
  r.state.adam.step = meta.at("adam_step").get<long>();
  for (const auto& h : meta.at("history")) {
    EpochStats s;
    s.epoch = h.at("epoch");
    s.step = h.at("step");
    s.loss = h.at("loss");
    s.video = h.at("video");
    s.instance = h.at("instance");
    s.fg = h.at("fg");
    s.bg = h.at("bg");
    s.abg = h.at("abg");
    r.state.history.push_back(s);
  }
  r.state.proposal_iou = meta.at("proposal_iou").get<std::vector<double>>();
  r.state.proposals = proposals_from_json(meta.at("proposals"));
  r.steps = meta.at("steps");
  for (auto& [name, t] : params) {
    const auto& src = all.at(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
    const auto& m = all.at(detail::kAdamFirst + name).data();
    const auto& v = all.at(detail::kAdamSecond + name).data();
    r.state.adam.first_moment[name].assign(m.begin(), m.end());
    r.state.adam.second_moment[name].assign(v.begin(), v.end());
  }
  return r;
}

/// Runs refinement, checkpoints every step, evaluates the reloaded final
/// checkpoint and writes metrics.json. The metrics file has no timestamps or
/// paths, so a fixed seed reproduces it byte for byte. `resume` names a step
/// checkpoint of an earlier run with the same config.
inline TrainOutcome cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume = std::nullopt) {
  cfg.validate();
  TrainOutcome o;
  o.output_dir = resolve_output_dir(cfg);
  fs::create_directories(o.output_dir);
  write_json_file(o.output_dir / "config.json", cfg);

  const RunData data = prepare_data(cfg, o.output_dir);
  const Dataset train = cfg.data.fixed_T > 0 ? fixed_length_copy(data.train, cfg.data.fixed_T) : data.train;
  const Dataset& monitor = data.test ? *data.test : data.train;

  ParameterStore params = init_parameters(cfg.model, cfg.seed);
  json steps = json::array();
  std::optional<ResumePoint> start;
  if (resume) {
    start = load_resume_state(*resume, params);
    steps = start->steps;
  }
  RefineHooks hooks;
  hooks.on_step = [&](const ParameterStore& p, const RefineState& st) {
    const int step = st.step;
    const bool segs = step > 0 && configured_switches(cfg.model).any();
    const auto stem = o.output_dir / "checkpoints" / ("step" + std::to_string(step));
    save_checkpoint(stem, p, checkpoint_meta(cfg, segs, step));
    write_proposals(o.output_dir / "proposals" / ("step" + std::to_string(step) + ".json"), st.proposals);
    json s{{"step", step}, {"proposal_iou", st.proposal_iou.back()}};
    if (cfg.eval_each_step) {
      const auto r = evaluate_model(p, cfg.model, monitor, cfg.eval, segs);
      s["average_map"] = r.average_map;
      s["short_average_map"] = r.short_average_map < 0 ? json(nullptr) : json(r.short_average_map);
    }
    steps.push_back(s);
    save_resume_state(stem, p, st, steps);
  };
  o.refine = refine(params, cfg.model, cfg.schedule, cfg.optimizer, cfg.eval, train, cfg.seed, hooks,
                    start ? &start->state : nullptr);

  o.final_checkpoint = o.output_dir / "checkpoints" / "final";
  save_checkpoint(o.final_checkpoint, params, checkpoint_meta(cfg, o.refine.with_segments, cfg.schedule.steps + 1));
  if (!o.refine.proposals.empty()) write_proposals(o.output_dir / "proposals" / "final.json", o.refine.proposals);

  ParameterStore reloaded = init_parameters(cfg.model, cfg.seed);
  load_checkpoint(o.final_checkpoint, reloaded);
  o.train_result = evaluate_model(reloaded, cfg.model, data.train, cfg.eval, o.refine.with_segments);
  write_report(o.output_dir, "report_train", o.train_result, cfg.save_detections);
  if (data.test) {
    o.test_result = evaluate_model(reloaded, cfg.model, *data.test, cfg.eval, o.refine.with_segments);
    write_report(o.output_dir, "report_test", *o.test_result, cfg.save_detections);
  }

  json m;
  m["seed"] = cfg.seed;
  m["epochs"] = o.refine.history;
  m["final_epochs"] = o.refine.final_epochs;
  m["proposal_iou"] = o.refine.proposal_iou;
  m["steps"] = steps;
  m["inference"] = {{"with_segments", o.refine.with_segments}, {"dss", o.refine.with_segments && cfg.model.use_dss && cfg.model.dss_at_inference}};
  m["final"]["train"] = metrics_json(o.train_result);
  if (o.test_result) m["final"]["test"] = metrics_json(*o.test_result);
  write_json_file(o.output_dir / "metrics.json", m);
  o.metrics = std::move(m);
  return o;
}

enum class InferenceMode { Auto, Base, Full };

struct LoadedModel {
  ModelConfig config;
  ParameterStore params;
  bool with_segments = false;
};

inline LoadedModel load_model(const fs::path& checkpoint) {
  const auto index = read_checkpoint_index(checkpoint_index_path(checkpoint));
  const json meta = index.value("meta", json::object());
  if (!meta.contains("model")) throw FormatError("checkpoint meta lacks the model configuration");
  LoadedModel m;
  from_json(meta.at("model"), m.config);
  m.config.validate("checkpoint.model");
  m.params = init_parameters(m.config, 0);
  load_checkpoint(checkpoint, m.params);
  m.with_segments = meta.value("with_segments", false);
  return m;
}

/// Evaluates a checkpoint on a manifest and writes `<stem>.json/.csv` into `out`.
inline DetectionResult cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const EvalConfig& ev,
                                const fs::path& out, InferenceMode mode = InferenceMode::Auto,
                                bool with_detections = false, const std::string& stem = "report") {
  ev.validate();
  const auto model = load_model(checkpoint);
  const Dataset ds = load_dataset(manifest);
  if (ds.feature_dim != model.config.feature_dim)
    throw ValidationError("model.D", "checkpoint expects D=" + std::to_string(model.config.feature_dim) +
                                         ", manifest has D=" + std::to_string(ds.feature_dim));
  if (ds.num_classes != model.config.num_classes)
    throw ValidationError("model.C", "checkpoint expects C=" + std::to_string(model.config.num_classes) +
                                         ", manifest has C=" + std::to_string(ds.num_classes));
  const bool segs = mode == InferenceMode::Auto ? model.with_segments : mode == InferenceMode::Full;
  auto r = evaluate_model(model.params, model.config, ds, ev, segs);
  write_report(out, stem, r, with_detections);
  return r;
}

struct GradcheckOutcome {
  GradcheckReport base;
  GradcheckReport full;
  double tolerance = 1e-4;

  bool passed() const { return base.passed(tolerance) && full.passed(tolerance); }
};

inline void to_json(json& j, const GradcheckOutcome& g) {
  j = json{{"tolerance", g.tolerance},
           {"passed", g.passed()},
           {"base", {{"max_rel_error", g.base.max_rel_error}, {"parameters", g.base.entries}}},
           {"full", {{"max_rel_error", g.full.max_rel_error}, {"parameters", g.full.entries}}}};
}

/// Finite-difference check of the base-model loss and of the full loss
/// (DSS, intra, inter, L_ins) on a tiny random instance.
inline GradcheckOutcome cmd_gradcheck(const RunConfig& cfg) {
  cfg.gradcheck.validate();
  cfg.model.validate();
  if (cfg.model.feature_dim > 8) throw ValidationError("model.D", "gradcheck needs D <= 8");
  const auto inst = make_gradcheck_instance(cfg.model, static_cast<std::size_t>(cfg.gradcheck.T), cfg.gradcheck.videos,
                                            cfg.seed);
  GradcheckOutcome out;
  out.tolerance = cfg.gradcheck.tolerance;
  ParameterStore params = init_parameters(cfg.model, cfg.seed);
  auto run = [&](bool segs) {
    return gradcheck(params, [&] { return instance_loss(inst, params, cfg.model, segs); }, cfg.gradcheck.step,
                     cfg.gradcheck.floor);
  };
  out.base = run(false);
  out.full = run(true);
  return out;
}

}  // namespace asmloc
