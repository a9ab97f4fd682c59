// asmloc command-line driver.
//
// Exit codes: 0 success, 1 validation or other error, 2 numerical failure
// (including a failed gradient check).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asmloc/asmloc.hpp"

namespace fs = std::filesystem;
using namespace asmloc;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kNumerical = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string output_dir;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "JSON run configuration");
  app->add_option("-s,--set", o.overrides, "Override a config value, e.g. --set model.gamma=8")->take_all();
  app->add_option("-o,--output-dir", o.output_dir, "Output directory (ASMLOC_OUTPUT_DIR wins when set)");
}

RunConfig load_run_config(const CommonOptions& o, std::vector<std::string> extra = {}) {
  json j = o.config.empty() ? json::object() : read_json_file(o.config);
  if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
  extra.insert(extra.begin(), o.overrides.begin(), o.overrides.end());
  return parse_run_config(j, extra);
}

EvalConfig eval_config(const std::string& path, const std::string& profile) {
  json j = path.empty() ? json::object() : read_json_file(path);
  if (j.contains("eval")) j = j.at("eval");
  if (!profile.empty()) j["profile"] = profile;
  EvalConfig ev = j.get<EvalConfig>();
  ev.validate();
  return ev;
}

void print_metrics(const DetectionResult& r, const std::string& label) {
  std::printf("%s: average mAP %.4f", label.c_str(), r.average_map);
  if (r.short_average_map >= 0) std::printf(", XS+S %.4f", r.short_average_map);
  std::printf("\n");
  for (std::size_t i = 0; i < r.iou_thresholds.size(); ++i)
    std::printf("  mAP@%.2f = %.4f\n", r.iou_thresholds[i], r.map[i]);
}

int cmd_generate(const std::string& config, const std::vector<std::string>& overrides, const std::string& out) {
  json j = config.empty() ? json::object() : read_json_file(config);
  if (j.contains("data") && j["data"].contains("synthetic")) j = j["data"]["synthetic"];
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(o, "override must look like key=value");
    json v = json::parse(o.substr(eq + 1), nullptr, false);
    std::string ptr;
    for (char ch : o.substr(0, eq)) ptr += ch == '.' ? '/' : ch;
    j[json::json_pointer("/" + ptr)] = v.is_discarded() ? json(o.substr(eq + 1)) : v;
  }
  SyntheticConfig syn = j.get<SyntheticConfig>();
  GenerationReport report;
  const Dataset ds = generate_synthetic(syn, &report);
  const auto manifest = write_dataset(out, ds);
  std::printf("wrote %zu videos to %s\n", ds.videos.size(), manifest.string().c_str());
  std::printf("bucket counts:");
  for (auto n : report.bucket_counts) std::printf(" %d", n);
  std::printf("  chi-square %.3f (critical %.3f)\n", report.chi_square, report.critical_value);
  return kOk;
}

int cmd_inspect(const std::string& path, const std::string& manifest) {
  const ProposalSet set = read_proposals(path);
  std::size_t total = 0;
  double length = 0;
  for (const auto& [id, props] : set) {
    total += props.size();
    for (const auto& p : props) length += p.end - p.start;
  }
  std::printf("videos %zu, proposals %zu, mean per video %.2f, mean length %.2f snippets\n", set.size(), total,
              set.empty() ? 0.0 : static_cast<double>(total) / set.size(), total ? length / total : 0.0);
  if (!manifest.empty()) std::printf("mean proposal/GT IoU %.4f\n", mean_proposal_iou(set, load_dataset(manifest)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised temporal action localization with action-aware segment modeling"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic feature dataset");
  std::string gen_config, gen_out = "synthetic";
  std::vector<std::string> gen_overrides;
  gen->add_option("-c,--config", gen_config, "JSON synthetic config (or a run config with data.synthetic)");
  gen->add_option("-s,--set", gen_overrides, "Override a field, e.g. --set num_videos=50")->take_all();
  gen->add_option("-o,--output-dir", gen_out, "Dataset directory");

  auto* train = app.add_subcommand("train", "Train with proposal refinement and evaluate");
  CommonOptions train_opts;
  std::string resume, train_profile;
  int fixed_T = 0;
  add_common(train, train_opts);
  train->add_option("--resume", resume, "Continue from a step checkpoint, e.g. run/checkpoints/step2");
  train->add_option("--profile", train_profile, "Evaluation profile")->check(CLI::IsMember({"thumos", "activitynet"}));
  train->add_option("--fixed-T", fixed_T, "Resample every training video to T snippets")->check(CLI::NonNegativeNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  std::string ckpt, manifest, eval_cfg, eval_profile, eval_mode = "auto", eval_out = ".", stem = "report";
  bool with_detections = false;
  eval->add_option("checkpoint", ckpt, "Checkpoint stem or index")->required();
  eval->add_option("manifest", manifest, "Dataset manifest with ground truth")->required();
  eval->add_option("-c,--config", eval_cfg, "JSON eval config (or a run config)");
  eval->add_option("--profile", eval_profile, "Evaluation profile")->check(CLI::IsMember({"thumos", "activitynet"}));
  eval->add_option("--mode", eval_mode, "Inference mode")->check(CLI::IsMember({"auto", "base", "full"}));
  eval->add_option("-o,--output-dir", eval_out, "Report directory");
  eval->add_option("--stem", stem, "Report file stem");
  eval->add_flag("--detections", with_detections, "Include per-video detections in the JSON report");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  CommonOptions grad_opts;
  add_common(grad, grad_opts);

  auto* inspect = app.add_subcommand("inspect-proposals", "Summarize a proposal dump");
  std::string props_path, props_manifest;
  inspect->add_option("proposals", props_path, "Proposal JSON file")->required();
  inspect->add_option("--manifest", props_manifest, "Manifest with ground truth for IoU");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) return cmd_generate(gen_config, gen_overrides, gen_out);

    if (*train) {
      std::vector<std::string> extra;
      if (!train_profile.empty()) extra.push_back("eval.profile=" + train_profile);
      if (fixed_T > 0) extra.push_back("data.fixed_T=" + std::to_string(fixed_T));
      const RunConfig cfg = load_run_config(train_opts, extra);
      const auto o = cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
      for (const auto& s : o.metrics["steps"])
        if (s.contains("average_map"))
          std::printf("step %d: proposal IoU %.4f, average mAP %.4f\n", s["step"].get<int>(),
                      s["proposal_iou"].get<double>(), s["average_map"].get<double>());
      print_metrics(o.train_result, "train");
      if (o.test_result) print_metrics(*o.test_result, "test");
      std::printf("output: %s\n", o.output_dir.string().c_str());
      return kOk;
    }

    if (*eval) {
      const auto mode = eval_mode == "base"   ? InferenceMode::Base
                        : eval_mode == "full" ? InferenceMode::Full
                                              : InferenceMode::Auto;
      const auto r = cmd_eval(ckpt, manifest, eval_config(eval_cfg, eval_profile), eval_out, mode, with_detections, stem);
      print_metrics(r, "eval");
      return kOk;
    }

    if (*grad) {
      const RunConfig cfg = load_run_config(grad_opts);
      const auto g = cmd_gradcheck(cfg);
      std::cout << json(g).dump(2) << "\n";
      return g.passed() ? kOk : kNumerical;
    }

    if (*inspect) return cmd_inspect(props_path, props_manifest);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
