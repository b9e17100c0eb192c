#pragma once

// Dense double-precision tensors and a reverse-mode differentiation tape.
//
// A Tensor is an immutable value: shape plus shared row-major storage. A
// tensor produced by an op whose inputs require gradients is recorded on the
// inputs' Tape and carries the id of its node. Tape::backward walks nodes in
// reverse creation order, which is a valid reverse topological order since
// every node's inputs were created before it.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gaug/error.hpp"

namespace gaug {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

class Tape;

class Tensor {
 public:
  Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t extent : shape_) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
    }
    if (numel(shape_) != data.size()) {
      throw DimensionError("shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                           " values, got " + std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double value) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }
  std::span<const double> data() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::optional<NodeId> node() const {
    if (!tape_) return std::nullopt;
    return node_;
  }

  /// Same values, detached from any tape.
  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  std::vector<double> to_vector() const { return *data_; }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
};

/// Passed to backward closures. Input positions that do not require a
/// gradient are skipped so closures can avoid needless work.
class GradSink {
 public:
  GradSink(Tape& tape, const std::vector<std::optional<NodeId>>& inputs) : tape_(tape), inputs_(inputs) {}

  bool wants(std::size_t input) const { return inputs_.at(input).has_value(); }
  inline void add(std::size_t input, std::span<const double> grad);

 private:
  Tape& tape_;
  const std::vector<std::optional<NodeId>>& inputs_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

struct TapeNode {
  std::string op;
  std::vector<std::optional<NodeId>> inputs;
  Shape shape;
  BackwardFn backward;  // empty for leaves
};

/// Node id -> gradient, as produced by Tape::backward.
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<std::vector<double>> grads, std::vector<Shape> shapes)
      : tape_(tape), grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient w.r.t. `t`; exact zeros when `t` does not influence the loss.
  Tensor of(const Tensor& t) const {
    if (!t.requires_grad() || t.tape() != tape_ || *t.node() >= grads_.size() || grads_[*t.node()].empty()) {
      return Tensor::zeros(t.shape());
    }
    return Tensor(shapes_[*t.node()], grads_[*t.node()]);
  }

  bool reached(const Tensor& t) const {
    return t.requires_grad() && t.tape() == tape_ && *t.node() < grads_.size() && !grads_[*t.node()].empty();
  }

 private:
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiation target (leaf node).
  Tensor watch(const Tensor& value) {
    Tensor t = value.detached();
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(TapeNode{"leaf", {}, t.shape(), {}});
    return t;
  }

  /// Attaches `out` to the tape when any input requires a gradient;
  /// otherwise returns it as a constant.
  static Tensor record(std::string op, std::initializer_list<const Tensor*> inputs, Tensor out, BackwardFn fn) {
    Tape* tape = nullptr;
    std::vector<std::optional<NodeId>> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) {
      if (in->requires_grad()) {
        if (tape && tape != in->tape()) throw ContractError(op + ": inputs recorded on different tapes");
        tape = in->tape();
        ids.emplace_back(*in->node());
      } else {
        ids.emplace_back(std::nullopt);
      }
    }
    if (!tape) return out;
    out.tape_ = tape;
    out.node_ = tape->nodes_.size();
    tape->nodes_.push_back(TapeNode{std::move(op), std::move(ids), out.shape(), std::move(fn)});
    return out;
  }

  Gradients backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    if (loss.tape() != this) throw ContractError("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grads_[*loss.node()] = {1.0};
    for (std::size_t id = *loss.node() + 1; id-- > 0;) {
      const TapeNode& node = nodes_[id];
      if (grads_[id].empty() || !node.backward) continue;
      GradSink sink(*this, node.inputs);
      node.backward(grads_[id], sink);
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.push_back(n.shape);
    return Gradients(this, std::exchange(grads_, {}), std::move(shapes));
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }

 private:
  friend class GradSink;

  void accumulate(NodeId id, std::span<const double> grad) {
    auto& slot = grads_[id];
    if (grad.size() != numel(nodes_[id].shape)) {
      throw ContractError("gradient for node '" + nodes_[id].op + "' has " + std::to_string(grad.size()) +
                          " values, expected " + std::to_string(numel(nodes_[id].shape)));
    }
    if (slot.empty()) {
      slot.assign(grad.begin(), grad.end());
    } else {
      for (std::size_t i = 0; i < grad.size(); ++i) slot[i] += grad[i];
    }
  }

  std::vector<TapeNode> nodes_;
  std::vector<std::vector<double>> grads_;
};

inline void GradSink::add(std::size_t input, std::span<const double> grad) {
  if (const auto& id = inputs_.at(input)) tape_.accumulate(*id, grad);
}

}  // namespace gaug
