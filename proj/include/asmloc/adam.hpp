#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "asmloc/errors.hpp"
#include "asmloc/tensor.hpp"

namespace asmloc {

/// Named leaf tensors in insertion order. Iteration order is the registration
/// order, which fixes checkpoint layout and update order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
    if (!value.requires_grad()) value = Tensor::from(value.shape(), {value.data().begin(), value.data().end()}, true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const Tensor& at(const std::string& name) const { return const_cast<ParameterStore*>(this)->at(name); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  /// Deep copy; the copy shares no buffers with this store.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_)
      out.add(name, Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, true));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One bias-corrected Adam update of every parameter, then zero the gradients.
inline void adam_step(ParameterStore& params, AdamState& state) {
  for (auto& [name, p] : params)
    if (!p.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");

  ++state.step;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0);
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    auto theta = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      theta[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    p.zero_grad();
  }
}

}  // namespace asmloc
