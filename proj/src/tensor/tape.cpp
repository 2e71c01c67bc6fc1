#include "l2g/tensor/tape.hpp"

namespace l2g {

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id_];
}

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id_];
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant recorded");
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& value) {
  Node n;
  n.borrowed = &value;
  if (value.requires_grad()) {
    n.sink = &value;
    n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, bool needs_grad, Backward backward) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by " + std::string(op));
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

bool Tape::needs_grad(Var v) const { return node(v).needs_grad; }

std::span<double> Tape::grad(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(value(v).size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::grad_view(Var v) const { return node(v).grad; }

void Tape::backward(Var loss) {
  if (backward_done_) throw ContractError("backward called twice on the same tape");
  if (value(loss).size() != 1) throw ContractError("backward needs a scalar loss, got " + to_string(value(loss).shape()));
  backward_done_ = true;
  if (!node(loss).needs_grad) return;
  grad(loss)[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, Var(this, i));
    if (n.sink != nullptr) {
      auto dst = n.sink->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

}  // namespace l2g
