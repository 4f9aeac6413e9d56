#include "crackseg/tape.hpp"

#include "crackseg/errors.hpp"

namespace crackseg {

template <typename S>
void Tape<S>::check(const Var<S>& v) const {
  require<ContractError>(v.tape == this && v.epoch == epoch_,
                         "variable refers to a detached tape; re-run the forward pass");
  require<ContractError>(v.id >= 0 && v.id < static_cast<std::int32_t>(nodes_.size()),
                         "variable id out of range");
}

template <typename S>
Var<S> Tape<S>::leaf(Tensor<S> value, bool needs_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var<S>{this, static_cast<std::int32_t>(nodes_.size() - 1), epoch_};
}

template <typename S>
Var<S> Tape<S>::parameter(Parameter<S>& param) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = param.value;
  n.param = &param;
  n.needs_grad = param.trainable;
  nodes_.push_back(std::move(n));
  return Var<S>{this, static_cast<std::int32_t>(nodes_.size() - 1), epoch_};
}

template <typename S>
Var<S> Tape<S>::emplace(OpKind kind, std::vector<std::int32_t> inputs, Tensor<S> value,
                        BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(backward);
  for (std::int32_t in : n.inputs) {
    if (nodes_[static_cast<std::size_t>(in)].needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return Var<S>{this, static_cast<std::int32_t>(nodes_.size() - 1), epoch_};
}

template <typename S>
const Tensor<S>& Tape<S>::value(const Var<S>& v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

template <typename S>
const Tensor<S>& Tape<S>::grad(const Var<S>& v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

template <typename S>
void Tape<S>::accumulate(std::int32_t id, const Tensor<S>& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) {
    return;
  }
  if (!n.grad.defined()) {
    n.grad = Tensor<S>::zeros(n.value.shape());
  }
  n.grad.add_(g);
}

template <typename S>
void Tape<S>::backward(const Var<S>& loss) {
  check(loss);
  require<ContractError>(!backward_done_,
                         "backward already ran on this tape; re-run the forward pass first");
  const Node& loss_node = nodes_[static_cast<std::size_t>(loss.id)];
  require<ContractError>(loss_node.value.numel() == 1, "backward requires a scalar loss, got shape ",
                         loss_node.value.shape_str());
  backward_done_ = true;

  nodes_[static_cast<std::size_t>(loss.id)].grad = Tensor<S>::ones(loss_node.value.shape());
  for (std::int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad.defined()) {
      continue;  // not on any path from the loss
    }
    if (n.backward) {
      n.backward(*this, i);
    }
    if (n.param != nullptr && n.param->trainable) {
      n.param->accumulate_grad(n.grad);
    }
  }
}

template <typename S>
void Tape<S>::reset() {
  nodes_.clear();
  backward_done_ = false;
  ++epoch_;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace crackseg
