#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>

#include "l2g/tensor/tensor.hpp"

namespace l2g {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of a feed-forward computation.
///
/// Nodes are appended in evaluation order, so backward() visits them in
/// reverse insertion order. Parameters are borrowed: the tape reads their
/// values in place and, after backward(), adds the accumulated gradient into
/// Tensor::grad() of every parameter that has requires_grad() set. Every
/// recorded value is checked for NaN/Inf.
class Tape {
 public:
  /// Receives the tape and the node's own handle, whose grad is d(loss)/d(output).
  using Backward = std::function<void(Tape&, Var self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Borrowed value that never receives gradient.
  Var input(const Tensor& value);
  /// Borrowed parameter; gradient flows into it iff value.requires_grad().
  Var param(Tensor& value);

  /// Used by op implementations. `backward` is dropped when !needs_grad.
  Var record(std::string_view op, Tensor value, bool needs_grad, Backward backward);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  /// Gradient buffer for v, allocated as zeros on first access.
  std::span<double> grad(Var v);
  /// Gradient accumulated so far, empty if none reached v.
  std::span<const double> grad_view(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    Backward backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

inline Tape& Var::tape() const { return *tape_; }
inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace l2g
