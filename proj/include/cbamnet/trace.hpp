#pragma once

#include <functional>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

/// Tape of executed differentiable operations.
///
/// Constructing a Trace makes it the active tape for tensors of type T on
/// the current thread; ops whose inputs require grad append a backward rule
/// to it. The previous active tape is restored on destruction, so traces
/// nest. A trace is confined to the thread that created it.
template <class T>
class Trace {
 public:
  Trace();
  ~Trace();
  Trace(const Trace&) = delete;
  Trace& operator=(const Trace&) = delete;

  static Trace* active();

  /// Runs every recorded backward rule once, in reverse order, seeding the
  /// scalar loss with gradient 1. Leaf gradients accumulate.
  void backward(const Tensor<T>& loss);
  /// Drops recorded rules so the trace can be used again.
  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  void record(std::function<void()> rule) { entries_.push_back(std::move(rule)); }

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Trace* previous_ = nullptr;
};

/// Suspends recording on this thread for the lifetime of the guard.
template <class T>
class NoTrace {
 public:
  NoTrace();
  ~NoTrace();
  NoTrace(const NoTrace&) = delete;
  NoTrace& operator=(const NoTrace&) = delete;

 private:
  Trace<T>* saved_;
};

namespace detail {

template <class T>
Trace<T>*& active_trace();

/// The active trace when any input needs a gradient, else nullptr.
template <class T>
Trace<T>* tracking(std::initializer_list<const Tensor<T>*> inputs) {
  Trace<T>* tr = active_trace<T>();
  if (!tr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return tr;
  }
  return nullptr;
}

template <class T>
Trace<T>* tracking(const std::vector<Tensor<T>>& inputs) {
  Trace<T>* tr = active_trace<T>();
  if (!tr) return nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return tr;
  }
  return nullptr;
}

/// Marks `out` as a traced intermediate.
template <class T>
void mark_traced(Tensor<T>& out) {
  out.node().requires_grad = true;
  out.node().is_leaf = false;
}

}  // namespace detail

extern template class Trace<float>;
extern template class Trace<double>;
extern template class NoTrace<float>;
extern template class NoTrace<double>;

}  // namespace cbamnet
