#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "koopcon/error.hpp"

namespace koopcon {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major float64 array with an optional link into the reverse-mode
// graph. Copies are shallow handles onto the same storage, like parameters in
// most autograd engines; clone() makes an independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor eye(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::size_t i) const { return node_->data.at(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  Tensor& set_requires_grad(bool flag = true) {
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }

  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Same values, no graph history, no gradient requirement.
  Tensor detach() const { return Tensor(shape(), node_->data); }
  Tensor clone() const { return detach(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds an op output. The backward closure is attached only when recording
// is on and some input needs a gradient.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(const Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  if (grad_mode_enabled() && any_requires_grad(inputs)) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor* t : inputs) node.parents.push_back(t->node());
    node.backward = std::move(backward);
  }
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs,
                          std::function<void(const Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (grad_mode_enabled() && needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor& t : inputs) node.parents.push_back(t.node());
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

// Accumulates d(root)/d(t) into every reachable tensor that requires a grad.
inline void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  if (!root.requires_grad()) {
    throw ContractError("backward() root is not connected to any tensor requiring a gradient");
  }

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) node->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

inline void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace koopcon
