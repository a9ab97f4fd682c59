#pragma once

// Action-aware segment modeling: dynamic segment sampling (inverse-CDF
// resampling driven by proposal durations), masked intra-segment attention and
// pooled inter-segment attention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "asmloc/errors.hpp"
#include "asmloc/ops.hpp"
#include "asmloc/tensor.hpp"

namespace asmloc {

/// Half-open snippet interval [start, end) carrying a class id in [1, C].
struct ActionProposal {
  int start = 0;
  int end = 0;
  int cls = 0;
  int duration() const { return end - start; }
  bool operator==(const ActionProposal&) const = default;
};

inline void validate_proposals(const std::vector<ActionProposal>& proposals, std::size_t T, const char* who) {
  for (const auto& p : proposals)
    if (p.start < 0 || p.end <= p.start || p.end > static_cast<int>(T))
      throw ContractError(std::string(who) + ": proposal [" + std::to_string(p.start) + ", " + std::to_string(p.end) +
                          ") outside [0, " + std::to_string(T) + "]");
}

// ---------------------------------------------------------------------------
// Dynamic segment sampling

/// Snippet t owns the continuous span [t - 0.5, t + 0.5) and sampling mass
/// W[t] spread uniformly over it; the CDF is the running sum of that mass.
struct SamplingPlan {
  std::vector<double> weights;
  std::vector<double> cumulative;  // inclusive running sum of weights
  std::vector<double> positions;   // one real source position per output row
  std::vector<ActionProposal> remapped;

  std::size_t length() const { return weights.size(); }
  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
  double mass_before(std::size_t t) const { return t == 0 ? 0.0 : cumulative[t - 1]; }

  /// CDF at a continuous position x in [-0.5, T - 0.5].
  double cdf(double x) const {
    const auto T = static_cast<double>(length());
    x = std::clamp(x, -0.5, T - 0.5);
    auto t = static_cast<std::size_t>(std::floor(x + 0.5));
    if (t >= length()) t = length() - 1;
    return mass_before(t) + weights[t] * (x - (static_cast<double>(t) - 0.5));
  }

  /// Inverse CDF: the continuous position holding cumulative mass y.
  double inverse_cdf(double y) const {
    y = std::clamp(y, 0.0, total());
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), y);
    if (it == cumulative.end()) --it;
    const auto t = static_cast<std::size_t>(it - cumulative.begin());
    return static_cast<double>(t) - 0.5 + (y - mass_before(t)) / weights[t];
  }

  /// Fractional output row at which original position x is sampled.
  double resampled_coordinate(double x) const {
    return cdf(x) * static_cast<double>(length()) / total() - 0.5;
  }
};

/// Sampling weights W (gamma / duration on short proposals, max over
/// overlaps, 1 elsewhere) and their midpoint inverse-CDF sample positions
/// x_i = f_W^{-1}((i + 0.5) f_W(T) / T).
inline SamplingPlan build_sampling_plan(const std::vector<ActionProposal>& proposals, std::size_t T, double gamma) {
  if (T == 0) throw ContractError("build_sampling_plan: empty video");
  if (!(gamma >= 1)) throw ContractError("build_sampling_plan: gamma must be >= 1");
  validate_proposals(proposals, T, "build_sampling_plan");

  SamplingPlan plan;
  plan.weights.assign(T, 1.0);
  for (const auto& p : proposals) {
    const double d = p.duration();
    if (d > gamma) continue;
    const double w = gamma / d;
    for (int t = p.start; t < p.end; ++t) plan.weights[t] = std::max(plan.weights[t], w);
  }
  plan.cumulative.resize(T);
  double run = 0.0;
  for (std::size_t t = 0; t < T; ++t) plan.cumulative[t] = (run += plan.weights[t]);

  const double total = plan.total();
  const auto n = static_cast<double>(T);
  plan.positions.resize(T);
  for (std::size_t i = 0; i < T; ++i) plan.positions[i] = plan.inverse_cdf((static_cast<double>(i) + 0.5) * total / n);

  // Output row i belongs to a proposal when its quantile mass lies inside the
  // proposal's mass interval.
  auto first_row_at_or_after = [&](double mass) {
    const double r = std::ceil(mass * n / total - 0.5 - 1e-9);
    return static_cast<int>(std::clamp(r, 0.0, n));
  };
  for (const auto& p : proposals) {
    ActionProposal r{first_row_at_or_after(plan.mass_before(p.start)),
                     first_row_at_or_after(plan.cumulative[p.end - 1]), p.cls};
    if (r.end <= r.start) {
      r.start = std::min(r.start, static_cast<int>(T) - 1);
      r.end = r.start + 1;
    }
    plan.remapped.push_back(r);
  }
  return plan;
}

/// Row i = linear interpolation of X at plan.positions[i]; T rows in, T rows out.
inline Tensor resample_features(const Tensor& x, const SamplingPlan& plan) {
  if (x.rows() != plan.length())
    throw ContractError("resample_features: plan built for T=" + std::to_string(plan.length()) + ", features have " +
                        std::to_string(x.rows()) + " rows");
  return resample_rows(x, plan.positions);
}

/// Maps rows computed on the resampled timeline back onto original snippets.
inline Matrix map_to_original(const Matrix& resampled, const SamplingPlan& plan) {
  const std::size_t T = plan.length();
  if (resampled.rows != T) throw DimensionError("map_to_original: row count differs from plan length");
  Matrix out(T, resampled.cols);
  for (std::size_t t = 0; t < T; ++t) {
    const double u = std::clamp(plan.resampled_coordinate(static_cast<double>(t)), 0.0, static_cast<double>(T - 1));
    const auto lo = std::min(static_cast<std::size_t>(u), T - 1);
    const auto hi = std::min(lo + 1, T - 1);
    const double w = u - static_cast<double>(lo);
    for (std::size_t c = 0; c < resampled.cols; ++c) out(t, c) = (1 - w) * resampled(lo, c) + w * resampled(hi, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention

/// M[i, j] = 1 iff some proposal covers both i and j.
inline Matrix build_attention_mask(const std::vector<ActionProposal>& proposals, std::size_t T) {
  validate_proposals(proposals, T, "build_attention_mask");
  Matrix m(T, T, 0.0);
  for (const auto& p : proposals)
    for (int i = p.start; i < p.end; ++i)
      for (int j = p.start; j < p.end; ++j) m(i, j) = 1.0;
  return m;
}

inline std::vector<std::uint8_t> covered_rows(const std::vector<ActionProposal>& proposals, std::size_t T) {
  std::vector<std::uint8_t> rows(T, 0);
  for (const auto& p : proposals)
    for (int t = p.start; t < p.end; ++t) rows[t] = 1;
  return rows;
}

struct IntraSegmentParams {
  Tensor wq, wk, wv, wo;  // [E×E]
  Tensor bn_scale, bn_shift;  // [E]
};

struct InterSegmentParams {
  Tensor wq, wk, wv, wo;  // [E×E]
};

struct AttentionResult {
  Tensor output;
  std::vector<Tensor> weights;  // one attention matrix per head
};

/// Multi-head scaled dot-product attention over the rows of x. A null mask
/// means unmasked attention.
inline AttentionResult multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                            const Tensor& wo, int heads, const Matrix* mask) {
  const std::size_t E = x.cols();
  if (heads < 1 || E % static_cast<std::size_t>(heads) != 0)
    throw ConfigError("attention: H=" + std::to_string(heads) + " does not divide feature width " + std::to_string(E));
  const std::size_t dh = E / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);

  AttentionResult r;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const auto b = h * dh, e = b + dh;
    const Tensor logits = scale(matmul(slice_cols(q, b, e), transpose(slice_cols(k, b, e))), inv_sqrt);
    Tensor a = mask ? masked_softmax_rows(logits, *mask) : softmax(logits, 1);
    outs.push_back(matmul(a, slice_cols(v, b, e)));
    r.weights.push_back(std::move(a));
  }
  r.output = matmul(outs.size() == 1 ? outs[0] : concat_cols(outs), wo);
  return r;
}

/// Z = X + BN(A V W_O) with the proposal mask restricting attention. BN
/// standardizes each channel over the proposal-covered rows and applies the
/// learnable scale/shift there; uncovered rows receive zero, so Z = X on them.
inline AttentionResult intra_segment_attention(const Tensor& x, const Matrix& mask, const IntraSegmentParams& p,
                                               int heads, double bn_eps = 1e-5) {
  if (mask.rows != x.rows() || mask.cols != x.rows()) throw DimensionError("intra_segment_attention: mask must be T×T");
  auto r = multi_head_attention(x, p.wq, p.wk, p.wv, p.wo, heads, &mask);
  std::vector<std::uint8_t> rows(x.rows(), 0);
  std::vector<double> row_flag(x.rows(), 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t j = 0; j < x.rows(); ++j)
      if (mask(t, j) != 0.0) {
        rows[t] = 1;
        row_flag[t] = 1.0;
        break;
      }
  const Tensor normed = add_row(mul_row(standardize_cols_masked(r.output, rows, bn_eps), p.bn_scale), p.bn_shift);
  r.output = add(x, mul_col(normed, Tensor::vector(row_flag)));
  return r;
}

/// Average-pools each proposal into a token, runs self-attention across the
/// N tokens, then adds each token's output back over its own interval.
inline AttentionResult inter_segment_attention(const Tensor& x, const std::vector<ActionProposal>& proposals,
                                               const InterSegmentParams& p, int heads) {
  const std::size_t T = x.rows();
  validate_proposals(proposals, T, "inter_segment_attention");
  if (proposals.empty()) return {x, {}};
  const std::size_t N = proposals.size();
  Matrix pool(N, T, 0.0), spread(T, N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& pr = proposals[n];
    for (int t = pr.start; t < pr.end; ++t) {
      pool(n, t) = 1.0 / pr.duration();
      spread(t, n) = 1.0;
    }
  }
  const Tensor tokens = matmul(Tensor::constant(pool), x);
  auto r = multi_head_attention(tokens, p.wq, p.wk, p.wv, p.wo, heads, nullptr);
  r.output = add(x, matmul(Tensor::constant(spread), r.output));
  return r;
}

}  // namespace asmloc
