// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cycleseg/errors.hpp"

namespace cycleseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  check_shape(shape);
  auto n = shape_numel(shape);
  storage_ = std::make_shared<const Storage>(Storage{std::move(shape), std::vector<double>(n, fill)});
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  storage_ = std::make_shared<const Storage>(Storage{std::move(shape), std::move(values)});
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return storage_ ? storage_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return storage_->shape[axis];
}

std::size_t Tensor::numel() const { return storage_ ? storage_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!storage_) return {};
  return storage_->values;
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const auto& s = shape();
  if (s.size() != 4) throw ShapeError("at() needs a 4-D tensor, got " + shape_str(s));
  return storage_->values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return storage_->values[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.values();
  auto bv = b.values();
  return std::memcmp(av.data(), bv.data(), av.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor Tape::watch(const Tensor& value) {
  if (!value.defined()) throw ShapeError("cannot watch an undefined tensor");
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{value.shape(), nullptr, {}});
  return t;
}

Tensor Tape::record(Shape shape, std::vector<double> values, Backward backward) {
#ifndef NDEBUG
  for (double v : values)
    if (!std::isfinite(v)) throw Error("non-finite value produced by a recorded operation");
#endif
  Tensor t(shape, std::move(values));
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{std::move(shape), std::move(backward), {}});
  return t;
}

std::span<double> Tape::grad_buffer(std::size_t node) {
  auto& n = nodes_.at(node);
  if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), 0.0);
  return n.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw Error("loss was not recorded on this tape");
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.node())[0] = 1.0;
  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // Callbacks only touch buffers of earlier nodes, so this span stays valid.
    n.backward(std::span<const double>(n.grad), *this);
  }
}

Tensor Tape::grad(const Tensor& tensor) const {
  if (tensor.tape() != this) throw Error("tensor is not tracked by this tape");
  const auto& n = nodes_.at(tensor.node());
  if (n.grad.empty()) return Tensor::zeros(n.shape);
  return Tensor(n.shape, n.grad);
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t || !t->tracked()) continue;
    if (tape && tape != t->tape()) throw Error("operands are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

Tape* common_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.tracked()) continue;
    if (tape && tape != t.tape()) throw Error("operands are recorded on different tapes");
    tape = t.tape();
  }
  return tape;
}

Tensor emit(Tape* tape, Shape shape, std::vector<double> values, Tape::Backward backward) {
  if (!tape) return Tensor(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), std::move(backward));
}

void accumulate_grad(Tape& tape, const Tensor& target, std::span<const double> grad) {
  if (!target.tracked()) return;
  auto buf = tape.grad_buffer(target.node());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += grad[i];
}

}  // namespace cycleseg
