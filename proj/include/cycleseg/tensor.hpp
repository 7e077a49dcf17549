// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cycleseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. Values are immutable and shared between
/// copies; a tensor produced on a Tape also carries the id of its tape node.
/// Image maps use the batch x channels x height x width layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double operator[](std::size_t i) const { return values()[i]; }
  /// Element of a 4-D tensor.
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  /// The single value of a one-element tensor.
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }
  /// Same values, no tape association.
  Tensor detach() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
  };

  std::shared_ptr<const Storage> storage_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;

  friend class Tape;
};

/// Bitwise equality of shape and values.
bool identical(const Tensor& a, const Tensor& b);
/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Records differentiable operations in execution order and replays them in
/// strict reverse order. One tape per forward/backward pass; the tape must
/// outlive every tensor recorded on it.
class Tape {
 public:
  /// Called during backward with the node's output gradient.
  using Backward = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Register a leaf (typically a parameter) and return its tracked handle.
  Tensor watch(const Tensor& value);

  /// Append an operation node. `backward` may be empty for constants.
  Tensor record(Shape shape, std::vector<double> values, Backward backward);

  /// Gradient buffer of a node, zero-initialised on first access.
  std::span<double> grad_buffer(std::size_t node);

  /// Reverse accumulation from a one-element tensor recorded on this tape.
  void backward(const Tensor& loss);

  /// Gradient of a tracked tensor after backward(); zeros when unused.
  Tensor grad(const Tensor& tensor) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    Backward backward;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

/// Returns the tape shared by the tracked inputs, or nullptr when none is
/// tracked. Throws if tracked inputs live on different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);
Tape* common_tape(std::span<const Tensor> inputs);

/// Builds an op result: recorded on `tape` when non-null, plain otherwise.
Tensor emit(Tape* tape, Shape shape, std::vector<double> values, Tape::Backward backward);

/// Accumulates `grad` into the tape buffer of `target` when it is tracked.
void accumulate_grad(Tape& tape, const Tensor& target, std::span<const double> grad);

}  // namespace cycleseg
