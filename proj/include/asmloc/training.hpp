#pragma once

// Mini-batch training with gradient accumulation and the multi-step proposal
// refinement driver.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "asmloc/adam.hpp"
#include "asmloc/config.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/pipeline.hpp"
#include "asmloc/proposals.hpp"

namespace asmloc {

struct EpochStats {
  int epoch = 0;  // global, counted from 0
  int step = 0;   // 0 base phase, l for refinement step l, L+1 for the final phase
  double loss = 0, video = 0, instance = 0;
  double fg = 0, bg = 0, abg = 0;
};

inline void to_json(json& j, const EpochStats& s) {
  j = json{{"epoch", s.epoch}, {"step", s.step}, {"loss", s.loss}, {"video", s.video},
           {"instance", s.instance}, {"fg", s.fg}, {"bg", s.bg}, {"abg", s.abg}};
}

/// What one training epoch sees.
struct EpochPlan {
  const ProposalSet* proposals = nullptr;  // null: base model
  SegmentSwitches switches;
  bool instance_loss = false;
};

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Sums per-video losses scaled by 1/batch into the gradients, one Adam step per batch.
inline EpochStats train_epoch(ParameterStore& params, AdamState& adam, const ModelConfig& cfg, const Dataset& ds,
                              const EpochPlan& plan, int batch_size, std::uint64_t seed, int epoch) {
  static const std::vector<ActionProposal> kNone;
  EpochStats stats;
  stats.epoch = epoch;
  const auto order = epoch_order(ds.videos.size(), seed, epoch);
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(batch_size));
    const double inv = 1.0 / static_cast<double>(e - b);
    params.zero_grad();
    for (std::size_t i = b; i < e; ++i) {
      const auto& v = ds.videos[order[i]];
      const auto* props = &kNone;
      if (plan.proposals) {
        auto it = plan.proposals->find(v.id);
        if (it != plan.proposals->end()) props = &it->second;
      }
      const auto f = forward(Tensor::constant(v.features), params, cfg, *props, plan.switches);
      const auto loss = training_loss(f, encode_labels(v.classes, cfg.num_classes), cfg, plan.instance_loss);
      const double value = loss.total.item();
      if (!std::isfinite(value)) throw NumericalError("non-finite training loss on video '" + v.id + "'");
      backward(scale(loss.total, inv));
      stats.loss += value;
      stats.video += loss.video;
      stats.instance += loss.instance;
      stats.fg += loss.fg;
      stats.bg += loss.bg;
      stats.abg += loss.abg;
    }
    for (auto& [name, t] : params)
      for (double g : t.grad())
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    adam_step(params, adam);
  }
  const double n = std::max<double>(1.0, static_cast<double>(ds.videos.size()));
  stats.loss /= n;
  stats.video /= n;
  stats.instance /= n;
  stats.fg /= n;
  stats.bg /= n;
  stats.abg /= n;
  return stats;
}

/// New proposals per video from the ground-truth classes. DSS stays off so the
/// coordinates are original snippet indices; attention modules use `context`.
inline ProposalSet regenerate_proposals(const ParameterStore& params, const ModelConfig& cfg, const EvalConfig& ev,
                                        const Dataset& ds, const ProposalSet* context) {
  NoGradGuard no_grad;
  SegmentSwitches sw = configured_switches(cfg);
  sw.dss = false;
  ProposalSet out;
  for (const auto& v : ds.videos) {
    std::vector<ActionProposal> ctx;
    if (context) {
      auto it = context->find(v.id);
      if (it != context->end()) ctx = it->second;
    }
    const auto f = forward(Tensor::constant(v.features), params, cfg, cfg.regenerate_with_context ? ctx : std::vector<ActionProposal>{}, context ? sw : SegmentSwitches{});
    out[v.id] = proposals_from_scores(snippet_scores(f.outputs), v.classes, cfg, ev);
  }
  return out;
}

inline double mean_proposal_iou(const ProposalSet& set, const Dataset& ds) {
  double total = 0;
  int n = 0;
  for (const auto& v : ds.videos) {
    if (!v.gt_segments) continue;
    auto it = set.find(v.id);
    total += proposal_gt_iou(it == set.end() ? std::vector<ActionProposal>{} : it->second, *v.gt_segments);
    ++n;
  }
  return n ? total / n : 0.0;
}

struct RefineResult {
  ProposalSet proposals;  // proposals driving the final model; empty when L = 0
  std::vector<EpochStats> history;
  std::vector<double> proposal_iou;  // per step 0..L
  bool with_segments = false;        // inference mode of the final model
  int final_epochs = 0;
};

/// Everything needed to continue after a completed step.
struct RefineState {
  int step = 0;   // last completed step
  int epoch = 0;  // next global epoch
  AdamState adam;
  ProposalSet proposals;
  std::vector<EpochStats> history;
  std::vector<double> proposal_iou;
};

struct RefineHooks {
  std::function<void(const EpochStats&)> on_epoch;
  // After the base phase (step 0) and each refinement step.
  std::function<void(const ParameterStore&, const RefineState&)> on_step;
};

/// Base phase for E epochs, L refinement steps of E epochs each, then a final
/// phase with the last proposals until the epoch loss plateaus. With `resume`,
/// `params` must hold the parameters saved alongside that state.
inline RefineResult refine(ParameterStore& params, const ModelConfig& cfg, const RefinementSchedule& schedule,
                           const OptimizerConfig& opt, const EvalConfig& ev, const Dataset& ds, std::uint64_t seed,
                           const RefineHooks& hooks = {}, const RefineState* resume = nullptr) {
  schedule.validate();
  opt.validate();
  if (resume && (resume->step < 0 || resume->step > schedule.steps))
    throw ValidationError("resume.step", "step " + std::to_string(resume->step) + " is outside 0.." +
                                             std::to_string(schedule.steps));
  RefineState st;
  st.adam = AdamState(opt.adam);
  if (resume) {
    st = *resume;
    st.adam.config = opt.adam;
  }
  RefineResult r;
  auto run = [&](const EpochPlan& plan, int step) {
    auto s = train_epoch(params, st.adam, cfg, ds, plan, opt.batch_size, seed, st.epoch++);
    s.step = step;
    st.history.push_back(s);
    if (hooks.on_epoch) hooks.on_epoch(s);
    return s;
  };
  auto finish_step = [&](int step, ProposalSet props) {
    st.step = step;
    st.proposals = std::move(props);
    st.proposal_iou.push_back(mean_proposal_iou(st.proposals, ds));
    if (hooks.on_step) hooks.on_step(params, st);
  };

  const EpochPlan base{};
  if (!resume) {
    for (int e = 0; e < schedule.epochs_per_step; ++e) run(base, 0);
    finish_step(0, regenerate_proposals(params, cfg, ev, ds, nullptr));
  }

  const EpochPlan full_template{nullptr, configured_switches(cfg), true};
  for (int l = st.step + 1; l <= schedule.steps; ++l) {
    EpochPlan plan = full_template;
    plan.proposals = &st.proposals;
    for (int e = 0; e < schedule.epochs_per_step; ++e) run(plan, l);
    finish_step(l, regenerate_proposals(params, cfg, ev, ds, &st.proposals));
  }

  EpochPlan final_plan = base;
  if (schedule.steps > 0) {
    final_plan = full_template;
    final_plan.proposals = &st.proposals;
    r.with_segments = configured_switches(cfg).any();
  }
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int e = 0; e < schedule.max_final_epochs && stale < schedule.patience; ++e) {
    const auto s = run(final_plan, schedule.steps + 1);
    ++r.final_epochs;
    if (!std::isfinite(best) || s.loss < best - schedule.min_delta * std::abs(best)) {
      best = s.loss;
      stale = 0;
    } else {
      ++stale;
    }
  }
  r.history = std::move(st.history);
  r.proposal_iou = std::move(st.proposal_iou);
  if (schedule.steps > 0) r.proposals = std::move(st.proposals);
  return r;
}

}  // namespace asmloc
