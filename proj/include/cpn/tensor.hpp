#pragma once

// Reverse-mode automatic differentiation over dense float64 arrays.
//
// Every operation allocates a new node holding its forward values plus a
// closure that routes output-gradients to the node's parents. backward()
// walks the graph once in reverse topological order, accumulating into
// TensorNode::grad, so a value feeding several consumers receives the sum
// of their contributions. New differentiable operations are added through
// make_op without touching this file.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cpn/errors.hpp"

namespace cpn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad and accumulates into parents' grad. Null for leaves.
  std::function<void(TensorNode&)> backward_fn;

  void accumulate(const std::vector<double>& g) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {}
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_size(t.node_->shape), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " needs " +
                                  std::to_string(shape_size(shape)) + " values, got " +
                                  std::to_string(values.size()));
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->values.size(); }

  const std::vector<double>& values() const { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }

  // Scalar read; the usual way to pull a loss value out of the graph.
  double value() const {
    if (size() != 1)
      throw std::invalid_argument("Tensor::value: tensor has " +
                                  std::to_string(size()) + " elements, expected 1");
    return node_->values[0];
  }

  // In-place access for optimizer updates on leaf parameters.
  std::vector<double>& mutable_values() { return node_->values; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (node_->grad.empty())
      throw std::logic_error("Tensor::grad: no gradient has been accumulated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Extension point for new differentiable operations: wrap precomputed
// forward values and a gradient-routing closure into a graph node. The
// closure runs only when some parent requires gradients.
inline Tensor make_op(Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values));
  auto node = out.node();
  node->parents.reserve(parents.size());
  bool needs_grad = false;
  for (const Tensor& p : parents) {
    needs_grad = needs_grad || p.requires_grad();
    node->parents.push_back(p.node());
  }
  node->requires_grad = needs_grad;
  if (needs_grad) node->backward_fn = std::move(backward_fn);
  return out;
}

// Backpropagates d(root)/d(node) into every reachable node that requires
// gradients. The root must be scalar; its seed gradient is 1. Gradients
// accumulate across calls, so callers reusing leaves between backward
// passes are expected to zero_grad() them in between.
inline void backward(const Tensor& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; parents are visited before the node lands in
  // `order`, so reverse iteration is a valid reverse-topological walk.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      TensorNode* parent = node->parents[next_parent++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate({1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace cpn
