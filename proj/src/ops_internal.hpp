#pragma once

#include <memory>
#include <vector>

#include "cbamnet/tensor.hpp"
#include "cbamnet/trace.hpp"

namespace cbamnet::detail {

template <class T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Allocates grads of inputs that take part in backward. Returns false when
// the output never received a gradient, in which case the rule has nothing
// to propagate but the inputs still end up with populated (zero) grads.
template <class T>
bool begin_backward(const NodePtr<T>& out, std::initializer_list<TensorNode<T>*> inputs) {
  for (TensorNode<T>* in : inputs) {
    if (in && in->requires_grad) in->ensure_grad();
  }
  return !out->grad.empty();
}

template <class T>
TensorNode<T>* grad_target(const Tensor<T>& t) {
  return t.defined() && t.requires_grad() ? &t.node() : nullptr;
}

template <class T>
Tensor<T> make_output(const Shape& shape) {
  return Tensor<T>::zeros(shape);
}

}  // namespace cbamnet::detail
