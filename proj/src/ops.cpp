#include "cbamnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gemm.hpp"
#include "ops_internal.hpp"

namespace cbamnet {

using detail::begin_backward;
using detail::grad_target;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// Per-output-axis element strides of an operand; 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t axis_in = in.size() - 1 - k;
    const std::size_t axis_out = r - 1 - k;
    strides[axis_out] = in[axis_in] == 1 ? 0 : s;
    s *= in[axis_in];
  }
  return strides;
}

// Calls fn(out_offset, a_offset, b_offset, length, a_step, b_step) for every
// run along the last output axis, in row-major order.
template <class Fn>
void for_each_broadcast_run(const Shape& out, const std::vector<std::size_t>& sa,
                            const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t r = out.size();
  const std::size_t len = out[r - 1];
  const std::size_t runs = shape_numel(out) / len;
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t run = 0; run < runs; ++run) {
    fn(run * len, ia, ib, len, sa[r - 1], sb[r - 1]);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <class T>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();

  if (op == BinaryOp::div && debug_checks()) {
    for (T v : b.data()) {
      if (v == T(0)) throw std::domain_error("division by exact zero");
    }
  }

  for_each_broadcast_run(out_shape, sa, sb,
                         [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t len,
                             std::size_t da, std::size_t db) {
                           for (std::size_t j = 0; j < len; ++j) {
                             const T x = pa[ia + j * da];
                             const T y = pb[ib + j * db];
                             T v;
                             switch (op) {
                               case BinaryOp::add: v = x + y; break;
                               case BinaryOp::sub: v = x - y; break;
                               case BinaryOp::mul: v = x * y; break;
                               default: v = x / y; break;
                             }
                             po[o + j] = v;
                           }
                         });
  check_finite(out, "broadcast_binary");

  if (auto* tr = detail::tracking<T>({&a, &b})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr(), out_shape, sa, sb,
                op] {
      auto* ga_node = an->requires_grad ? an.get() : nullptr;
      auto* gb_node = bn->requires_grad ? bn.get() : nullptr;
      if (!begin_backward<T>(on, {ga_node, gb_node})) return;
      const T* g = on->grad.data();
      const T* xa = an->data.data();
      const T* xb = bn->data.data();
      const T* y = on->data.data();
      T* ga = ga_node ? ga_node->grad.data() : nullptr;
      T* gb = gb_node ? gb_node->grad.data() : nullptr;
      for_each_broadcast_run(out_shape, sa, sb,
                             [&](std::size_t o, std::size_t ia, std::size_t ib, std::size_t len,
                                 std::size_t da, std::size_t db) {
                               for (std::size_t j = 0; j < len; ++j) {
                                 const T gj = g[o + j];
                                 const std::size_t pa_i = ia + j * da;
                                 const std::size_t pb_i = ib + j * db;
                                 switch (op) {
                                   case BinaryOp::add:
                                     if (ga) ga[pa_i] += gj;
                                     if (gb) gb[pb_i] += gj;
                                     break;
                                   case BinaryOp::sub:
                                     if (ga) ga[pa_i] += gj;
                                     if (gb) gb[pb_i] -= gj;
                                     break;
                                   case BinaryOp::mul:
                                     if (ga) ga[pa_i] += gj * xb[pb_i];
                                     if (gb) gb[pb_i] += gj * xa[pa_i];
                                     break;
                                   case BinaryOp::div:
                                     if (ga) ga[pa_i] += gj / xb[pb_i];
                                     if (gb) gb[pb_i] -= gj * y[o + j] / xb[pb_i];
                                     break;
                                 }
                               }
                             });
    });
  }
  return out;
}

template <class T>
Tensor<T> affine_scalar(const Tensor<T>& a, T scale, T shift) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * scale + shift;
  check_finite(out, "affine_scalar");
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), scale] {
      if (!begin_backward<T>(on, {an.get()})) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * scale;
    });
  }
  return out;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data().data(), n, false);
  check_finite(out, "matmul");
  if (auto* tr = detail::tracking<T>({&a, &b})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr(), m, k, n] {
      auto* ga = an->requires_grad ? an.get() : nullptr;
      auto* gb = bn->requires_grad ? bn.get() : nullptr;
      if (!begin_backward<T>(on, {ga, gb})) return;
      if (ga) {
        std::vector<T> bt(k * n);
        detail::transpose(bn->data.data(), k, n, bt.data());
        detail::gemm_nn(m, k, n, on->grad.data(), n, bt.data(), k, ga->grad.data(), k, true);
      }
      if (gb) {
        std::vector<T> at(m * k);
        detail::transpose(an->data.data(), m, k, at.data());
        detail::gemm_nn(k, n, m, at.data(), m, on->grad.data(), n, gb->grad.data(), n, true);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> reduce(const Tensor<T>& a, const std::vector<std::size_t>& axes, ReduceKind kind,
                 bool keepdims) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  std::vector<bool> reduced(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r) throw ShapeError("reduce axis " + std::to_string(ax) + " invalid for rank " +
                                  std::to_string(r));
    reduced[ax] = true;
  }
  Shape kept(r);
  Shape out_shape;
  for (std::size_t i = 0; i < r; ++i) {
    kept[i] = reduced[i] ? 1 : in[i];
    if (!reduced[i] || keepdims) out_shape.push_back(kept[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Output stride per input axis (0 on reduced axes).
  std::vector<std::size_t> ostride(r, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
      ostride[i] = reduced[i] ? 0 : s;
      s *= kept[i];
    }
  }
  const std::size_t out_n = shape_numel(kept);
  const std::size_t count = a.numel() / out_n;

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  T* po = out.data().data();
  const T* pa = a.data().data();
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) {
    argmax.assign(out_n, SIZE_MAX);
    std::fill(po, po + out_n, -std::numeric_limits<T>::infinity());
  }

  // Visits input elements in row-major order, yielding the output offset.
  auto visit = [&](auto&& fn) {
    std::vector<std::size_t> idx(r, 0);
    std::size_t o = 0;
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
      fn(i, o);
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        o += ostride[ax];
        if (idx[ax] < in[ax]) break;
        o -= ostride[ax] * in[ax];
        idx[ax] = 0;
      }
    }
  };

  if (kind == ReduceKind::max) {
    visit([&](std::size_t i, std::size_t o) {
      if (argmax[o] == SIZE_MAX || pa[i] > po[o]) {
        po[o] = pa[i];
        argmax[o] = i;
      }
    });
  } else {
    visit([&](std::size_t i, std::size_t o) { po[o] += pa[i]; });
    if (kind == ReduceKind::mean) {
      for (std::size_t o = 0; o < out_n; ++o) po[o] /= static_cast<T>(count);
    }
  }

  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), kind, count, in, ostride,
                argmax = std::move(argmax)] {
      if (!begin_backward<T>(on, {an.get()})) return;
      const T* g = on->grad.data();
      T* ga = an->grad.data();
      if (kind == ReduceKind::max) {
        for (std::size_t o = 0; o < argmax.size(); ++o) ga[argmax[o]] += g[o];
        return;
      }
      const T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
      const std::size_t rr = in.size();
      std::vector<std::size_t> idx(rr, 0);
      std::size_t o = 0;
      for (std::size_t i = 0; i < an->data.size(); ++i) {
        ga[i] += kind == ReduceKind::mean ? g[o] * scale : g[o];
        for (std::size_t ax = rr; ax-- > 0;) {
          ++idx[ax];
          o += ostride[ax];
          if (idx[ax] < in[ax]) break;
          o -= ostride[ax] * in[ax];
          idx[ax] = 0;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(a, axes, ReduceKind::sum);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(a, axes, ReduceKind::mean);
}

template <class T>
Tensor<T> activation(const Tensor<T>& a, ActivationKind kind) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto x = a.data();
  auto y = out.data();
  if (kind == ActivationKind::relu) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
  }
  check_finite(out, "activation");
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), kind] {
      if (!begin_backward<T>(on, {an.get()})) return;
      const std::size_t n = on->grad.size();
      const T* g = on->grad.data();
      T* ga = an->grad.data();
      if (kind == ActivationKind::relu) {
        const T* xv = an->data.data();
        for (std::size_t i = 0; i < n; ++i) {
          if (xv[i] > T(0)) ga[i] += g[i];
        }
      } else {
        const T* s = on->data.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out = Tensor<T>::from(shape, std::vector<T>(a.data().begin(), a.data().end()));
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr()] {
      if (!begin_backward<T>(on, {an.get()})) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

namespace {

// Calls fn(in_offset, out_offset, run_length) for each contiguous last-axis
// run of `in` embedded into `out` at per-axis offsets `start`.
template <class Fn>
void for_each_embedded_run(const Shape& in, const Shape& out, const std::vector<std::size_t>& start,
                           Fn&& fn) {
  const std::size_t r = in.size();
  std::vector<std::size_t> ostride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    ostride[i] = s;
    s *= out[i];
  }
  const std::size_t len = in[r - 1];
  const std::size_t runs = shape_numel(in) / len;
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t run = 0; run < runs; ++run) {
    std::size_t o = 0;
    for (std::size_t ax = 0; ax < r; ++ax) o += (idx[ax] + start[ax]) * ostride[ax];
    fn(run * len, o, len);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++idx[ax] < in[ax]) break;
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <class T>
Tensor<T> pad(const Tensor<T>& a, const std::vector<std::pair<std::size_t, std::size_t>>& amounts) {
  if (amounts.size() != a.rank()) throw ShapeError("pad needs one (before, after) pair per axis");
  Shape out_shape = a.shape();
  std::vector<std::size_t> start(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    out_shape[i] += amounts[i].first + amounts[i].second;
    start[i] = amounts[i].first;
  }
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* pa = a.data().data();
  T* po = out.data().data();
  for_each_embedded_run(a.shape(), out_shape, start, [&](std::size_t i, std::size_t o, std::size_t n) {
    std::copy(pa + i, pa + i + n, po + o);
  });
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), start] {
      if (!begin_backward<T>(on, {an.get()})) return;
      for_each_embedded_run(an->shape, on->shape, start,
                            [&](std::size_t i, std::size_t o, std::size_t n) {
                              for (std::size_t j = 0; j < n; ++j) an->grad[i + j] += on->grad[o + j];
                            });
    });
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin >= end || end > a.dim(axis)) {
    throw ShapeError("invalid slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  std::vector<std::size_t> start(a.rank(), 0);
  start[axis] = begin;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* pa = a.data().data();
  T* po = out.data().data();
  // The output is embedded in the input at `start`.
  for_each_embedded_run(out_shape, a.shape(), start, [&](std::size_t o, std::size_t i, std::size_t n) {
    std::copy(pa + i, pa + i + n, po + o);
  });
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), start] {
      if (!begin_backward<T>(on, {an.get()})) return;
      for_each_embedded_run(on->shape, an->shape, start,
                            [&](std::size_t o, std::size_t i, std::size_t n) {
                              for (std::size_t j = 0; j < n; ++j) an->grad[i + j] += on->grad[o + j];
                            });
    });
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw ShapeError("concat extent mismatch: " + shape_str(p.shape()) + " vs " +
                         shape_str(first));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  std::vector<std::vector<std::size_t>> starts;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::vector<std::size_t> start(first.size(), 0);
    start[axis] = offset;
    offset += p.dim(axis);
    const T* pa = p.data().data();
    T* po = out.data().data();
    for_each_embedded_run(p.shape(), out_shape, start,
                          [&](std::size_t i, std::size_t o, std::size_t n) {
                            std::copy(pa + i, pa + i + n, po + o);
                          });
    starts.push_back(std::move(start));
  }
  if (auto* tr = detail::tracking<T>(parts)) {
    detail::mark_traced(out);
    std::vector<detail::NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    tr->record([nodes, on = out.node_ptr(), starts] {
      bool live = !on->grad.empty();
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto& in = *nodes[k];
        if (!in.requires_grad) continue;
        in.ensure_grad();
        if (!live) continue;
        for_each_embedded_run(in.shape, on->shape, starts[k],
                              [&](std::size_t i, std::size_t o, std::size_t n) {
                                for (std::size_t j = 0; j < n; ++j) in.grad[i + j] += on->grad[o + j];
                              });
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& a, std::size_t factor) {
  if (a.rank() < 2 || factor == 0) throw ShapeError("upsample needs rank >= 2 and factor >= 1");
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::size_t planes = a.numel() / (h * w);
  Shape out_shape = a.shape();
  out_shape[a.rank() - 2] = h * factor;
  out_shape[a.rank() - 1] = w * factor;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* pa = a.data().data();
  T* po = out.data().data();
  const std::size_t oh = h * factor, ow = w * factor;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      const T* src = pa + p * h * w + (y / factor) * w;
      T* dst = po + p * oh * ow + y * ow;
      for (std::size_t x = 0; x < ow; ++x) dst[x] = src[x / factor];
    }
  }
  if (auto* tr = detail::tracking<T>({&a})) {
    detail::mark_traced(out);
    tr->record([an = a.node_ptr(), on = out.node_ptr(), planes, h, w, factor] {
      if (!begin_backward<T>(on, {an.get()})) return;
      const std::size_t oh = h * factor, ow = w * factor;
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          T* dst = an->grad.data() + p * h * w + (y / factor) * w;
          const T* g = on->grad.data() + p * oh * ow + y * ow;
          for (std::size_t x = 0; x < ow; ++x) dst[x / factor] += g[x];
        }
      }
    });
  }
  return out;
}

#define CBAMNET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> broadcast_binary(const Tensor<T>&, const Tensor<T>&, BinaryOp);            \
  template Tensor<T> affine_scalar(const Tensor<T>&, T, T);                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> reduce(const Tensor<T>&, const std::vector<std::size_t>&, ReduceKind, bool); \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> activation(const Tensor<T>&, ActivationKind);                              \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                   \
  template Tensor<T> pad(const Tensor<T>&,                                                      \
                         const std::vector<std::pair<std::size_t, std::size_t>>&);              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);

CBAMNET_INSTANTIATE_OPS(float)
CBAMNET_INSTANTIATE_OPS(double)

}  // namespace cbamnet
