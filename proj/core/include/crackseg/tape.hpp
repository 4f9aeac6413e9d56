#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// A value tensor with an accumulated gradient and a freeze flag. Gradients
/// accumulate across backward passes; the optimizer's zero_grads step resets
/// them. A frozen parameter (trainable == false) receives no gradient and is
/// never modified by an optimizer step.
template <typename S>
struct Parameter {
  Tensor<S> value;
  Tensor<S> grad;  // empty until first accumulation
  bool trainable = true;
  std::string name;

  void accumulate_grad(const Tensor<S>& g) {
    if (!grad.defined()) {
      grad = Tensor<S>::zeros(value.shape());
    }
    grad.add_(g);
  }
  void zero_grad() {
    if (!grad.defined()) {
      grad = Tensor<S>::zeros(value.shape());
    } else {
      grad.fill(S(0));
    }
  }
};

enum class OpKind : std::uint8_t {
  leaf,
  conv2d,
  conv_transpose2d,
  batch_norm,
  relu,
  sigmoid,
  max_pool2d,
  global_avg_pool,
  fully_connected,
  concat_channels,
  add,
  mul,
  affine,
  divide,
  sum_all,
  sum_per_sample,
  mean_all,
};

template <typename S>
class Tape;

/// Handle to a node on a tape. Stale handles (from a reset tape) are
/// rejected by every access.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  std::int32_t id = -1;
  std::uint64_t epoch = 0;

  const Tensor<S>& value() const;
};

/// Reverse-mode tape. Nodes are appended in forward order, which is a
/// topological order of the DAG, so backward is a single reverse sweep that
/// visits each node exactly once. One forward/backward pass owns its tape
/// exclusively; tensors handed out are immutable once produced.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::int32_t)>;

  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::int32_t> inputs;
    Tensor<S> value;
    Tensor<S> grad;  // allocated lazily during backward
    BackwardFn backward;
    Parameter<S>* param = nullptr;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a constant or differentiable input.
  Var<S> leaf(Tensor<S> value, bool needs_grad = false);

  /// Registers a leaf bound to a parameter; backward accumulates into
  /// param.grad when the parameter is trainable.
  Var<S> parameter(Parameter<S>& param);

  /// Registers an op result. needs_grad is inherited from the inputs.
  Var<S> emplace(OpKind kind, std::vector<std::int32_t> inputs, Tensor<S> value,
                 BackwardFn backward);

  const Tensor<S>& value(const Var<S>& v) const;
  /// Gradient of the last backward pass w.r.t. node v (undefined tensor if
  /// the node needed no gradient).
  const Tensor<S>& grad(const Var<S>& v) const;

  /// Reverse sweep from a scalar loss. Accumulates into the grad field of
  /// every trainable parameter reachable from the loss. May be called once
  /// per forward pass.
  void backward(const Var<S>& loss);

  /// Discards all nodes; outstanding Vars become stale and are rejected.
  void reset();

  std::size_t size() const { return nodes_.size(); }

  // Internal surface for op implementations.
  Node& node(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool node_needs_grad(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].needs_grad;
  }
  /// Adds g into the node's gradient buffer; dropped if the node does not
  /// need a gradient.
  void accumulate(std::int32_t id, const Tensor<S>& g);

  void check(const Var<S>& v) const;

 private:
  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 1;
  bool backward_done_ = false;

  friend struct Var<S>;
};

template <typename S>
inline const Tensor<S>& Var<S>::value() const {
  return tape->value(*this);
}

using VarF = Var<float>;
using VarD = Var<double>;

}  // namespace crackseg
