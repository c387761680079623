#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vsync {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

class Tensor;

namespace detail {

// One vertex of the recorded computation. Leaves have no parents and keep
// their gradient across backward sweeps; interior nodes are reset each sweep.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> propagate;
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient accumulator.
/// Copies share storage; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw std::invalid_argument("tensor shape " + shape_string(shape) + " holds " +
                                  std::to_string(shape_size(shape)) + " values, got " +
                                  std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t size() const { return node().value.size(); }

  std::span<const double> values() const { return node().value; }
  std::span<double> mutable_values() { return node().value; }
  double operator[](std::size_t i) const { return node().value[i]; }
  double item() const {
    if (size() != 1) throw std::invalid_argument("item() needs a single-element tensor, got " + shape_string(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool has_grad() const { return node().grad.size() == node().value.size(); }
  std::span<const double> grad() const { return node().grad; }
  std::span<double> mutable_grad() { return node().grad_buffer(); }
  void zero_grad() { node().grad.assign(node().value.size(), 0.0); }

  /// Same values, no history, no gradient requirement.
  Tensor detach() const { return Tensor(shape(), node().value, false); }
  /// Independent copy of values that keeps the gradient requirement.
  Tensor clone() const { return Tensor(shape(), node().value, requires_grad()); }

  /// Reverse sweep from this single-element tensor. Leaf gradients accumulate
  /// across calls; interior gradients are recomputed from scratch.
  void backward() const;

  detail::Node& node() const {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  /// Build an op result. When no input needs a gradient, history is dropped.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> propagate) {
    Tensor out(std::move(shape), std::move(values));
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      auto& n = out.node();
      n.requires_grad = true;
      for (auto& t : inputs) n.parents.push_back(t.handle());
      n.propagate = std::move(propagate);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (size() != 1) throw std::invalid_argument("backward() needs a scalar loss, got " + shape_string(shape()));
  if (!requires_grad()) throw std::logic_error("backward() on a tensor with no recorded history");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (n->propagate) n->propagate(*n);
  }
}

}  // namespace vsync
