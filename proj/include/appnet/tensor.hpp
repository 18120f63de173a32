#pragma once

// Dense row-major tensor with a reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Operations producing a
// tensor from inputs that require gradients record a backward closure on the
// result; backward() walks the recorded graph once in reverse topological
// order and then releases it.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace appnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape.front(); }
  std::size_t cols() const { return rank() < 2 ? 1 : node_->shape[1]; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return node_->value[0];
  }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  // Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

inline bool any_requires_grad() { return false; }

template <class T, class... Rest>
bool any_requires_grad(const Tensor<T>& t, const Rest&... rest) {
  return t.requires_grad() || any_requires_grad(rest...);
}

template <class T>
void check_finite(std::span<const T> v, const char* op) {
  for (const T x : v)
    if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + ": non-finite value produced");
}

// Builds the output tensor of an operation and wires its backward closure
// when any input needs a gradient.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite<T>(values, op);
  Tensor<T> out(std::move(shape), std::move(values));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (auto& in : inputs) node.parents.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
///
/// The graph is released afterwards; calling backward again on the same loss
/// throws.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  auto root = loss.node();
  if (root->consumed) throw std::logic_error("backward: graph already consumed");
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any parameter");

  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
  for (auto* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  root->consumed = true;
}

}  // namespace appnet
