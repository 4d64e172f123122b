#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posterpp/error.hpp"

namespace posterpp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Storage behind a Tensor handle. Several handles may share one node.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  void accumulate_grad(std::span<const double> g) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

/// Dense row-major tensor of doubles with an optional gradient slot.
///
/// A Tensor is a cheap shared handle. The shape never changes after
/// construction and every op returns a fresh tensor; only leaf parameters are
/// mutated in place (by the optimizer and checkpoint loader).
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
  }
  /// Element at a 2-D index (row, col) of a rank-2 tensor.
  double at(std::size_t row, std::size_t col) const {
    return node_->values[row * node_->shape.back() + col];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; all zeros when nothing has flowed in yet.
  std::vector<double> grad() const {
    return node_->grad.empty() ? std::vector<double>(size(), 0.0) : node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// In-place access for leaf updates (optimizer, checkpoint load).
  std::span<double> mutable_values() { return node_->values; }

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Detached deep copy; never requires grad.
  Tensor clone() const { return Tensor(shape(), node_->values, false); }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations for one forward pass.
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::shared_ptr<TensorNode> output;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(std::span<const double> out_grad)> rule;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  bool produced(const std::shared_ptr<TensorNode>& node) const {
    for (const auto& e : entries_) {
      if (e.output == node) return true;
    }
    return false;
  }

  /// Replays the recorded rules in reverse order, seeding d(loss)/d(loss) = 1.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (entries_.empty()) return;
    if (!loss.requires_grad() && !produced(loss.node())) {
      throw ContractError("backward(): loss was not produced on this tape");
    }
    loss.node()->accumulate_grad(std::vector<double>{1.0});
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->rule(it->output->grad);
    }
  }

 private:
  std::vector<Entry> entries_;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

/// Multiply-accumulate counter for matrix products.
struct MacCounter {
  std::uint64_t macs = 0;
  void add(std::uint64_t n) { macs += n; }
};

/// Per-call evaluation context threaded through every op.
///
/// `tape` enables gradient recording, `counter` enables MAC counting and
/// `on_attention` receives every post-softmax attention map a kernel produces.
struct Context {
  Context() = default;
  explicit Context(Tape* t, MacCounter* c = nullptr) : tape(t), counter(c) {}

  Tape* tape = nullptr;
  MacCounter* counter = nullptr;
  std::function<void(std::string_view kernel, const Tensor& weights)> on_attention;

  bool recording() const { return tape != nullptr; }
  void count(std::uint64_t macs) const {
    if (counter) counter->add(macs);
  }
};

}  // namespace posterpp
