#include "voxelcycle/autograd.hpp"

#include "voxelcycle/errors.hpp"

namespace voxelcycle {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}

void Parameter::zero_grad() {
  if (grad.dims() != value.dims()) {
    grad = Tensor(value.dims());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  require_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  require_finite(param.value, param.name.c_str());
  nodes_.push_back(Node{param.value, {}, true, {}, {}, &param});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.dims() != node.value.dims()) node.grad = Tensor(node.value.dims());
  return node.grad;
}

const Tensor& Tape::grad(Var v) {
  check_owned(v);
  return grad_buffer(v.id());
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id()].value.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + dims_to_string(nodes_[loss.id()].value.dims()));
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    if (nodes_[i].requires_grad) grad_buffer(i).fill(0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad) continue;
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.dims() != p.value.dims()) p.grad = Tensor(p.value.dims());
      auto dst = p.grad.data();
      auto src = node.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      continue;
    }
    if (!node.backward) continue;
    BackwardContext ctx{node.value, node.grad, {}, {}};
    ctx.in_values.reserve(node.inputs.size());
    ctx.in_grads.reserve(node.inputs.size());
    for (std::size_t in : node.inputs) {
      ctx.in_values.push_back(&nodes_[in].value);
      ctx.in_grads.push_back(nodes_[in].requires_grad ? &grad_buffer(in) : nullptr);
    }
    node.backward(ctx);
  }
}

}  // namespace voxelcycle
