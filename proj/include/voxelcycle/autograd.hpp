#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "voxelcycle/tensor.hpp"

namespace voxelcycle {

// A named trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// What a backward closure sees: the upstream gradient, the forward values of
// its inputs, and one gradient sink per input (null when the input does not
// require a gradient).
struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
// is topologically sorted by construction and backward is a single reverse
// sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape and readable through grad().
  Var variable(Tensor value);
  // Leaf bound to a parameter; backward adds into `param.grad`. The parameter
  // must outlive every backward call on this tape.
  Var parameter(Parameter& param);

  // Records an op output. The node requires a gradient when any input does;
  // otherwise the closure is dropped.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Accumulates d(loss)/d(leaf) into every gradient-carrying leaf. Node-level
  // gradients are recomputed from scratch per call, parameter gradients add up.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() for a node; zeros when unreached.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check_owned(Var v) const;
  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;
};

}  // namespace voxelcycle
