#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "asmloc/errors.hpp"

namespace asmloc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Plain row-major matrix of constants (features, masks, pseudo-labels).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw DimensionError("Matrix: value count does not match extents");
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

namespace detail {

inline bool& finite_checks_flag() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

}  // namespace detail

/// Toggle the NaN/Inf check run after every forward op. On by default in debug builds.
inline void set_finite_checks(bool enabled) { detail::finite_checks_flag() = enabled; }
inline bool finite_checks() { return detail::finite_checks_flag(); }

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// While alive, ops record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// One recorded value in the compute graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Shared handle to a graph node. Values are immutable once produced, except
/// for leaf parameters which the optimizer updates in place between passes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw DimensionError("Tensor: shape " + shape_string(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto count = shape_size(shape);
    return from(std::move(shape), std::vector<double>(count, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto count = shape_size(shape);
    return from(std::move(shape), std::vector<double>(count, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }
  static Tensor constant(const Matrix& m) { return from({m.rows, m.cols}, m.values); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    auto n = v.size();
    return from({n}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return dim() == 0 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return dim() < 2 ? 1 : node_->shape[1]; }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only for leaf parameters outside a recorded pass.
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item(): tensor is not a scalar " + shape_string(shape()));
    return node_->value[0];
  }
  Matrix to_matrix() const { return Matrix(rows(), cols(), node_->value); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->value, false); }

  const char* op() const { return node_->op; }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_finite(const Node& n) {
  if (!finite_checks()) return;
  for (double v : n.value)
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by op '") + n.op + "'");
}

/// Records an op output. `backward` is kept only when some input needs a gradient.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(values);
  if (grad_mode_flag())
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward = std::move(backward);
  }
  check_finite(*n);
  return Tensor(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across calls;
/// interior gradients are recomputed from scratch each call.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward(): loss must be a scalar tensor");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without deep recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward)
      n->grad.assign(n->value.size(), 0.0);
    else
      n->ensure_grad();
  }
  loss.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    for (auto& in : n->inputs)
      if (in->requires_grad) in->ensure_grad();
    n->backward(*n);
  }
}

}  // namespace asmloc
