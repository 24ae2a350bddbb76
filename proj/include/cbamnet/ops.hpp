#pragma once

#include <utility>
#include <vector>

#include "cbamnet/tensor.hpp"
#include "cbamnet/trace.hpp"

namespace cbamnet {

enum class BinaryOp { add, sub, mul, div };
enum class ReduceKind { sum, mean, max };
enum class ActivationKind { relu, sigmoid };

/// Broadcast shape under trailing-axis alignment; throws ShapeError when an
/// aligned pair differs and neither extent is 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Elementwise op with broadcasting. Backward sum-reduces gradients over the
/// broadcast axes so each operand's gradient has that operand's shape.
template <class T>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return broadcast_binary(a, b, BinaryOp::add); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return broadcast_binary(a, b, BinaryOp::sub); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return broadcast_binary(a, b, BinaryOp::mul); }
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return broadcast_binary(a, b, BinaryOp::div); }

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

/// a * scale + shift, elementwise.
template <class T>
Tensor<T> affine_scalar(const Tensor<T>& a, T scale, T shift);

/// [m,k] x [k,n] -> [m,n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Reduces over `axes` in fixed row-major order. Max routes its gradient to
/// the first maximal element of each group.
template <class T>
Tensor<T> reduce(const Tensor<T>& a, const std::vector<std::size_t>& axes, ReduceKind kind,
                 bool keepdims = false);

template <class T>
Tensor<T> sum(const Tensor<T>& a);
template <class T>
Tensor<T> mean(const Tensor<T>& a);

template <class T>
Tensor<T> activation(const Tensor<T>& a, ActivationKind kind);
template <class T>
Tensor<T> relu(const Tensor<T>& a) { return activation(a, ActivationKind::relu); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) { return activation(a, ActivationKind::sigmoid); }

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);

/// Zero padding with (before, after) counts for every axis.
template <class T>
Tensor<T> pad(const Tensor<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& amounts);

/// Elements [begin, end) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Nearest-neighbour upsampling of the last two axes by an integer factor.
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& a, std::size_t factor);

template <class T>
Tensor<T> upsample2x(const Tensor<T>& a) { return upsample_nearest(a, 2); }

}  // namespace cbamnet
