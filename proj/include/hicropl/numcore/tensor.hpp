// SPDX-License-Identifier: Apache-2.0
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

#include "hicropl/numcore/errors.hpp"

namespace hicropl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

// One record of the reverse-mode graph. The backward rule reads this node's
// grad and accumulates into the parents that require gradients.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    for (auto extent : shape)
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape.empty()) shape = {1};
    for (auto extent : shape)
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                           " values");
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) { return from({1}, {value}, requires_grad); }

  // Row-major matrix literal, used mostly by tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad = false) {
    std::vector<double> values;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
      if (row.size() != cols) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return from({rows.size(), cols}, std::move(values), requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    auto n = values.size();
    return from({n}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  // Rank-1 tensors behave as a single row in matrix-shaped operations.
  std::size_t rows() const { return rank() == 1 ? 1 : shape()[0]; }
  std::size_t cols() const { return rank() == 1 ? shape()[0] : numel() / shape()[0]; }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }

  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no graph history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  Tensor reshape(Shape shape) const;

  const char* op_name() const { return node_->op; }
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds an interior graph node whose parents are the given inputs.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op,
                            std::function<void(detail::Node&)> rule) {
    Tensor out = from(std::move(shape), std::move(values), false);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    out.node_->op = op;
    if (any) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(inputs.size());
      for (auto& in : inputs) out.node_->parents.push_back(in.node_);
      out.node_->backward = std::move(rule);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Convenience for backward rules: the accumulation target when the parent
// needs a gradient, otherwise nullptr.
inline double* grad_target(detail::Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  return make_result(std::move(new_shape), node_->data, {*this}, "reshape", [](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// Propagates dLoss/dx into every requires_grad ancestor of a scalar loss.
// Gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && parent->backward && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients belong to this pass only; leaves keep accumulating.
  for (auto* node : order)
    if (node->backward) node->grad.clear();
  auto* root = loss.node();
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && node->grad.size() == node->data.size()) node->backward(*node);
  }
}

}  // namespace hicropl
