#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "asmloc/asmloc.hpp"

namespace asmloc::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& x : m.values) x = n(rng);
  return m;
}

/// Largest relative error between backward() and central differences over `inputs`.
inline double max_grad_error(std::vector<Tensor> inputs, const std::function<Tensor()>& loss, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss());
  double worst = 0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double plus = loss().item();
      v[i] = saved - h;
      const double minus = loss().item();
      v[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2 * h), 1e-7));
    }
  }
  return worst;
}

/// Weighted sum with fixed random weights, so every output element matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape(), false)));
}

inline ModelConfig tiny_model(int C = 3, int D = 4, int E = 4, int H = 2) {
  ModelConfig c;
  c.num_classes = C;
  c.feature_dim = D;
  c.embed_dim = E;
  c.heads = H;
  return c;
}

}  // namespace asmloc::testing
