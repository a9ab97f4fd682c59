#pragma once

// Central-difference gradient check over every scalar of a parameter store.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "asmloc/adam.hpp"
#include "asmloc/dataset.hpp"
#include "asmloc/pipeline.hpp"
#include "asmloc/tensor.hpp"

namespace asmloc {

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

inline void to_json(json& j, const GradcheckEntry& e) {
  j = json{{"name", e.name}, {"count", e.count}, {"max_rel_error", e.max_rel_error}, {"max_abs_grad", e.max_abs_grad}};
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps float noise on vanishing
/// gradients from reading as a large relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradcheckReport gradcheck(ParameterStore& params, const std::function<Tensor()>& loss_fn, double h = 1e-5,
                                 double floor = 1e-6) {
  params.zero_grad();
  backward(loss_fn());
  GradcheckReport report;
  for (auto& [name, t] : params) {
    GradcheckEntry e{name, t.size(), 0.0, 0.0};
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard no_grad;
        values[i] = saved + h;
        plus = loss_fn().item();
        values[i] = saved - h;
        minus = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], numeric, floor));
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(analytic[i]));
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(e);
  }
  params.zero_grad();
  return report;
}

/// Small random videos with fixed proposals for exercising the whole loss.
struct GradcheckInstance {
  Dataset data;
  ProposalSet proposals;
};

inline GradcheckInstance make_gradcheck_instance(const ModelConfig& cfg, std::size_t T, int videos, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  GradcheckInstance g;
  g.data.num_classes = cfg.num_classes;
  g.data.feature_dim = cfg.feature_dim;
  for (int v = 0; v < videos; ++v) {
    VideoRecord rec;
    rec.id = "grad" + std::to_string(v);
    rec.features = Matrix(T, static_cast<std::size_t>(cfg.feature_dim));
    for (auto& x : rec.features.values) x = n01(rng);
    const int c1 = 1 + v % cfg.num_classes;
    const int c2 = 1 + (v + 1) % cfg.num_classes;
    rec.classes = c1 == c2 ? std::vector<int>{c1} : std::vector<int>{std::min(c1, c2), std::max(c1, c2)};
    rec.video_label = encode_labels(rec.classes, cfg.num_classes).fg;
    const int t = static_cast<int>(T);
    // One short proposal (DSS up-samples it), one long one, one overlapping.
    g.proposals[rec.id] = {{1, 3, c1}, {t / 2, t - 1, c2}, {2, t / 2 + 1, c1}};
    g.data.videos.push_back(std::move(rec));
  }
  return g;
}

/// Batch-mean training loss over the instance, every module and L_ins on.
inline Tensor instance_loss(const GradcheckInstance& g, const ParameterStore& params, const ModelConfig& cfg,
                            bool with_segments) {
  Tensor total;
  for (const auto& v : g.data.videos) {
    const auto& props = with_segments ? g.proposals.at(v.id) : std::vector<ActionProposal>{};
    const auto f = forward(Tensor::constant(v.features), params, cfg, props,
                           with_segments ? configured_switches(cfg) : SegmentSwitches{});
    const auto l = training_loss(f, encode_labels(v.classes, cfg.num_classes), cfg, with_segments);
    total = total.defined() ? add(total, l.total) : l.total;
  }
  return scale(total, 1.0 / static_cast<double>(g.data.videos.size()));
}

}  // namespace asmloc
