#pragma once

// MIL base model: temporal-conv embedding, CAS / attention / uncertainty heads,
// top-k video aggregation and the three video-level cross-entropies.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "asmloc/adam.hpp"
#include "asmloc/config.hpp"
#include "asmloc/errors.hpp"
#include "asmloc/ops.hpp"
#include "asmloc/tensor.hpp"

namespace asmloc {

/// Per-snippet outputs. Attention column 0 is foreground, column 1 background.
struct ModelOutputs {
  Tensor x;            // T×E
  Tensor cas;          // T×(C+1) logits
  Tensor attention;    // T×2
  Tensor uncertainty;  // T
};

inline constexpr std::size_t kForeground = 0;
inline constexpr std::size_t kBackground = 1;

namespace detail {

inline Tensor glorot(std::mt19937_64& rng, Shape shape, double fan_in, double fan_out, double gain) {
  const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline std::string layer_name(const char* kind, int depth, const char* part) {
  return std::string(kind) + std::to_string(depth) + "." + part;
}

}  // namespace detail

/// Registers every parameter of the model, segment modules included, so base
/// and full checkpoints share one layout.
inline ParameterStore init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto D = static_cast<std::size_t>(cfg.feature_dim);
  const auto E = static_cast<std::size_t>(cfg.embed_dim);
  const auto K = static_cast<std::size_t>(cfg.cas_width());
  const auto w = static_cast<std::size_t>(cfg.kernel_width);
  const double g = cfg.init_scale;

  ParameterStore p;
  p.add("embed.kernel", detail::glorot(rng, {w, D, E}, double(w * D), double(E), g));
  p.add("embed.bias", Tensor::zeros({E}, true));
  p.add("cas.weight", detail::glorot(rng, {E, K}, double(E), double(K), g));
  p.add("cas.bias", Tensor::zeros({K}, true));
  p.add("attention.weight", detail::glorot(rng, {E, 2}, double(E), 2.0, g));
  p.add("attention.bias", Tensor::zeros({2}, true));
  p.add("uncertainty.weight", detail::glorot(rng, {E, 1}, double(E), 1.0, g));
  p.add("uncertainty.bias", Tensor::zeros({1}, true));
  for (int d = 0; d < cfg.attention_depth; ++d) {
    for (const char* m : {"wq", "wk", "wv", "wo"})
      p.add(detail::layer_name("intra", d, m), detail::glorot(rng, {E, E}, double(E), double(E), g));
    p.add(detail::layer_name("intra", d, "bn_scale"), Tensor::full({E}, 1.0, true));
    p.add(detail::layer_name("intra", d, "bn_shift"), Tensor::zeros({E}, true));
    for (const char* m : {"wq", "wk", "wv", "wo"})
      p.add(detail::layer_name("inter", d, m), detail::glorot(rng, {E, E}, double(E), double(E), g));
  }
  return p;
}

/// X = ReLU(conv1d(F)).
inline Tensor embed(const Tensor& features, const ParameterStore& p, const ModelConfig& cfg) {
  if (features.dim() != 2 || features.cols() != static_cast<std::size_t>(cfg.feature_dim))
    throw ConfigError("embed: features have width " + std::to_string(features.dim() == 2 ? features.cols() : 0) +
                      ", model expects D=" + std::to_string(cfg.feature_dim));
  return relu(conv1d_temporal(features, p.at("embed.kernel"), p.at("embed.bias")));
}

inline ModelOutputs heads(const Tensor& x, const ParameterStore& p) {
  ModelOutputs o;
  o.x = x;
  o.cas = add_row(matmul(x, p.at("cas.weight")), p.at("cas.bias"));
  o.attention = softmax(add_row(matmul(x, p.at("attention.weight")), p.at("attention.bias")), 1);
  o.uncertainty = column(add_row(matmul(x, p.at("uncertainty.weight")), p.at("uncertainty.bias")), 0);
  return o;
}

struct WeightedCas {
  Tensor fg;
  Tensor bg;
};

/// P̂^m = P ⊙ A^m, broadcast over classes.
inline WeightedCas attention_weighted_cas(const Tensor& cas, const Tensor& attention) {
  if (attention.rows() != cas.rows() || attention.cols() != 2)
    throw DimensionError("attention_weighted_cas: attention must be T×2 matching the CAS");
  return {mul_col(cas, column(attention, kForeground)), mul_col(cas, column(attention, kBackground))};
}

/// Softmax over classes of each class's top-k temporal mean.
inline Tensor topk_video_probs(const Tensor& weighted_cas, std::size_t k) {
  return softmax(topk_mean_cols(weighted_cas, k), 0);
}

struct VideoLosses {
  Tensor fg, bg, abg, total;
};

inline void require_distribution(const Tensor& p, const char* name) {
  double s = 0;
  for (double v : p.data()) {
    if (v < 0) throw ContractError(std::string("video_losses: ") + name + " has a negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6)
    throw ContractError(std::string("video_losses: ") + name + " sums to " + std::to_string(s) + ", not 1");
}

inline VideoLosses video_losses(const Tensor& p_fg, const Tensor& p_bg, const std::vector<double>& y_fg,
                                const std::vector<double>& y_bg, const ModelConfig& cfg) {
  require_distribution(p_fg, "p_fg");
  require_distribution(p_bg, "p_bg");
  VideoLosses l;
  l.fg = cross_entropy(p_fg, y_fg);
  l.bg = cross_entropy(p_bg, y_bg);
  l.abg = cross_entropy(p_bg, y_fg);
  l.total = add(add(scale(l.fg, cfg.lambda_fg), scale(l.bg, cfg.lambda_bg)), scale(l.abg, cfg.lambda_abg));
  return l;
}

}  // namespace asmloc
