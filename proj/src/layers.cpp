#include "cbamnet/layers.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gemm.hpp"
#include "ops_internal.hpp"

namespace cbamnet {

using detail::begin_backward;

// ---------------------------------------------------------------------------
// Conv2dSpec

Conv2dSpec Conv2dSpec::square(std::size_t in, std::size_t out, std::size_t kernel,
                              std::size_t stride, std::size_t pad, std::size_t dilation,
                              std::size_t groups, bool bias) {
  Conv2dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.pad_h = s.pad_w = pad;
  s.dilation_h = s.dilation_w = dilation;
  s.groups = groups;
  s.bias = bias;
  return s;
}

void Conv2dSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || groups == 0) {
    throw std::invalid_argument("conv2d channel and group counts must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw std::invalid_argument("conv2d channels (" + std::to_string(in_channels) + ", " +
                                std::to_string(out_channels) + ") not divisible by groups " +
                                std::to_string(groups));
  }
  if (kernel_h == 0 || kernel_w == 0 || stride_h == 0 || stride_w == 0 || dilation_h == 0 ||
      dilation_w == 0) {
    throw std::invalid_argument("conv2d kernel, stride and dilation must be positive");
  }
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t d) {
  const long long num = static_cast<long long>(in + 2 * p) - static_cast<long long>(d * (k - 1)) - 1;
  if (num < 0) {
    throw ShapeError("convolution output extent < 1 for input extent " + std::to_string(in));
  }
  return static_cast<std::size_t>(num) / s + 1;
}

}  // namespace

std::size_t Conv2dSpec::out_h(std::size_t h) const {
  return conv_extent(h, kernel_h, stride_h, pad_h, dilation_h);
}

std::size_t Conv2dSpec::out_w(std::size_t w) const {
  return conv_extent(w, kernel_w, stride_w, pad_w, dilation_w);
}

Shape Conv2dSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel_h, kernel_w};
}

std::size_t Conv2dSpec::weight_count() const {
  return out_channels * (in_channels / groups) * kernel_h * kernel_w;
}

Shape Conv2dSpec::output_shape(const Shape& in) const {
  if (in.size() != 3 && in.size() != 4) throw ShapeError("conv2d expects [N,C,H,W] or [C,H,W]");
  const std::size_t r = in.size();
  if (in[r - 3] != in_channels) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(in[r - 3]) +
                     ", spec expects " + std::to_string(in_channels));
  }
  Shape out = in;
  out[r - 3] = out_channels;
  out[r - 2] = out_h(in[r - 2]);
  out[r - 1] = out_w(in[r - 1]);
  return out;
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, ho, wo, cg, og, kc, p;
};

ConvGeometry geometry(const Shape& x, const Conv2dSpec& s) {
  ConvGeometry g{};
  g.n = x[0];
  g.c = x[1];
  g.h = x[2];
  g.w = x[3];
  g.o = s.out_channels;
  g.ho = s.out_h(g.h);
  g.wo = s.out_w(g.w);
  g.cg = s.in_channels / s.groups;
  g.og = s.out_channels / s.groups;
  g.kc = g.cg * s.kernel_h * s.kernel_w;
  g.p = g.ho * g.wo;
  return g;
}

// Writes the [cg*kh*kw, ho*wo] column block of one sample into a column
// matrix with row stride `ld`.
template <class T>
void im2col(const T* src, const ConvGeometry& g, const Conv2dSpec& s, T* cols, std::size_t ld) {
  for (std::size_t c = 0; c < g.cg; ++c) {
    const T* plane = src + c * g.h * g.w;
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        T* dst = cols + ((c * s.kernel_h + ki) * s.kernel_w + kj) * ld;
        const long long x_off = static_cast<long long>(kj * s.dilation_w) -
                                static_cast<long long>(s.pad_w);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long long iy = static_cast<long long>(oy * s.stride_h + ki * s.dilation_h) -
                               static_cast<long long>(s.pad_h);
          T* row = dst + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long long>(g.h)) {
            std::fill(row, row + g.wo, T(0));
            continue;
          }
          const T* line = plane + iy * g.w;
          if (s.stride_w == 1 && x_off == 0 && g.wo <= g.w) {
            std::copy(line, line + g.wo, row);
            continue;
          }
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long long ix = static_cast<long long>(ox * s.stride_w) + x_off;
            row[ox] = (ix >= 0 && ix < static_cast<long long>(g.w)) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, std::size_t ld, const ConvGeometry& g, const Conv2dSpec& s,
                T* dst_planes) {
  for (std::size_t c = 0; c < g.cg; ++c) {
    T* plane = dst_planes + c * g.h * g.w;
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        const T* src = cols + ((c * s.kernel_h + ki) * s.kernel_w + kj) * ld;
        const long long x_off = static_cast<long long>(kj * s.dilation_w) -
                                static_cast<long long>(s.pad_w);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long long iy = static_cast<long long>(oy * s.stride_h + ki * s.dilation_h) -
                               static_cast<long long>(s.pad_h);
          if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
          T* line = plane + iy * g.w;
          const T* row = src + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long long ix = static_cast<long long>(ox * s.stride_w) + x_off;
            if (ix >= 0 && ix < static_cast<long long>(g.w)) line[ix] += row[ox];
          }
        }
      }
    }
  }
}

// Column matrix [kc, n*p] of one group over the whole batch.
template <class T>
void batch_im2col(const T* x, const ConvGeometry& g, const Conv2dSpec& s, std::size_t group,
                  T* cols) {
  const std::size_t ld = g.n * g.p;
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x + (n * g.c + group * g.cg) * g.h * g.w, g, s, cols + n * g.p, ld);
  }
}

}  // namespace

// Each group is one GEMM over the whole batch: W_g [og, kc] x cols [kc, n*p].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dSpec& spec) {
  spec.validate();
  if (x.rank() != 4) throw ShapeError("conv2d expects [N,C,H,W], got " + shape_str(x.shape()));
  const Shape out_shape = spec.output_shape(x.shape());
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d weight shape " + shape_str(weight.shape()) + " != " +
                     shape_str(spec.weight_shape()));
  }
  if (spec.bias != bias.defined() || (bias.defined() && bias.numel() != spec.out_channels)) {
    throw ShapeError("conv2d bias does not match spec");
  }
  const ConvGeometry g = geometry(x.shape(), spec);
  const std::size_t np = g.n * g.p;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* px = x.data().data();
  const T* pw = weight.data().data();
  T* po = out.data().data();
  std::vector<T> cols(g.kc * np);
  std::vector<T> tmp(g.og * np);
  for (std::size_t gi = 0; gi < spec.groups; ++gi) {
    batch_im2col(px, g, spec, gi, cols.data());
    detail::gemm_nn(g.og, np, g.kc, pw + gi * g.og * g.kc, g.kc, cols.data(), np, tmp.data(), np,
                    false);
    for (std::size_t o = 0; o < g.og; ++o) {
      const T b = spec.bias ? bias.data()[gi * g.og + o] : T(0);
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* src = tmp.data() + o * np + n * g.p;
        T* dst = po + (n * g.o + gi * g.og + o) * g.p;
        for (std::size_t p = 0; p < g.p; ++p) dst[p] = src[p] + b;
      }
    }
  }
  check_finite(out, "conv2d");

  if (auto* tr = detail::tracking<T>({&x, &weight, &bias})) {
    detail::mark_traced(out);
    tr->record([xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr(),
                on = out.node_ptr(), spec, g] {
      auto* gx = xn->requires_grad ? xn.get() : nullptr;
      auto* gw = wn->requires_grad ? wn.get() : nullptr;
      auto* gb = bn && bn->requires_grad ? bn.get() : nullptr;
      if (!begin_backward<T>(on, {gx, gw, gb})) return;
      const std::size_t np = g.n * g.p;
      const T* dout = on->grad.data();
      std::vector<T> dtmp(g.og * np);
      std::vector<T> cols(g.kc * np);
      std::vector<T> cols_t(gw ? g.kc * np : 0);
      std::vector<T> w_t(gx ? g.kc * g.og : 0);
      for (std::size_t gi = 0; gi < spec.groups; ++gi) {
        for (std::size_t o = 0; o < g.og; ++o) {
          for (std::size_t n = 0; n < g.n; ++n) {
            const T* src = dout + (n * g.o + gi * g.og + o) * g.p;
            std::copy(src, src + g.p, dtmp.data() + o * np + n * g.p);
          }
        }
        if (gw) {
          batch_im2col(xn->data.data(), g, spec, gi, cols.data());
          detail::transpose(cols.data(), g.kc, np, cols_t.data());
          detail::gemm_nn(g.og, g.kc, np, dtmp.data(), np, cols_t.data(), g.kc,
                          gw->grad.data() + gi * g.og * g.kc, g.kc, true);
        }
        if (gx) {
          detail::transpose(wn->data.data() + gi * g.og * g.kc, g.og, g.kc, w_t.data());
          detail::gemm_nn(g.kc, np, g.og, w_t.data(), g.og, dtmp.data(), np, cols.data(), np,
                          false);
          for (std::size_t n = 0; n < g.n; ++n) {
            col2im_add(cols.data() + n * g.p, np, g, spec,
                       gx->grad.data() + (n * g.c + gi * g.cg) * g.h * g.w);
          }
        }
        if (gb) {
          for (std::size_t o = 0; o < g.og; ++o) {
            T acc = T(0);
            for (std::size_t k = 0; k < np; ++k) acc += dtmp[o * np + k];
            gb->grad[gi * g.og + o] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Depthwise separable

void validate_depthwise_separable(const Conv2dSpec& dw, const Conv2dSpec& pw) {
  dw.validate();
  pw.validate();
  if (dw.groups != dw.in_channels || dw.in_channels != dw.out_channels) {
    throw std::invalid_argument("depthwise stage needs groups == in_channels == out_channels");
  }
  if (pw.kernel_h != 1 || pw.kernel_w != 1 || pw.groups != 1 || pw.stride_h != 1 ||
      pw.stride_w != 1 || pw.pad_h != 0 || pw.pad_w != 0) {
    throw std::invalid_argument("pointwise stage needs a 1x1 kernel, stride 1, groups 1");
  }
  if (pw.in_channels != dw.out_channels) {
    throw std::invalid_argument("pointwise input channels must equal depthwise channels");
  }
}

template <class T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& dw_weight,
                                   const Conv2dSpec& dw_spec, const Tensor<T>& pw_weight,
                                   const Conv2dSpec& pw_spec) {
  validate_depthwise_separable(dw_spec, pw_spec);
  if (dw_spec.bias || pw_spec.bias) {
    throw std::invalid_argument("depthwise_separable_conv takes bias-free specs; use the layer");
  }
  return conv2d(conv2d(x, dw_weight, Tensor<T>{}, dw_spec), pw_weight, Tensor<T>{}, pw_spec);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class T>
BatchNormState<T> BatchNormState<T>::fresh(std::size_t channels, BatchNormOptions options) {
  BatchNormState s;
  s.gamma = Tensor<T>::ones({channels});
  s.beta = Tensor<T>::zeros({channels});
  s.running_mean = Tensor<T>::zeros({channels});
  s.running_var = Tensor<T>::ones({channels});
  s.options = options;
  return s;
}

template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d expects [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != state.channels()) {
    throw ShapeError("batchnorm2d channel mismatch: " + std::to_string(c) + " vs " +
                     std::to_string(state.channels()));
  }
  const std::size_t m = n * hw;
  const T eps = static_cast<T>(state.options.eps);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(c);
  const T* px = x.data().data();
  T* po = out.data().data();
  const T* gamma = state.gamma.data().data();
  const T* beta = state.beta.data().data();

  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = px + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      const double mean_d = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = px + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = p[k] - mean_d;
          ss += d * d;
        }
      }
      const double var_d = ss / static_cast<double>(m);
      mu = static_cast<T>(mean_d);
      var = static_cast<T>(var_d);
      const double mom = state.options.momentum;
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var_d;
      T& rm = state.running_mean.data()[ch];
      T& rv = state.running_var.data()[ch];
      rm = static_cast<T>((1.0 - mom) * rm + mom * mean_d);
      rv = static_cast<T>((1.0 - mom) * rv + mom * unbiased);
    } else {
      mu = state.running_mean.data()[ch];
      var = state.running_var.data()[ch];
    }
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[ch] = inv;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const T xh = (px[off + k] - mu) * inv;
        xhat[off + k] = xh;
        po[off + k] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  check_finite(out, "batchnorm2d");

  if (auto* tr = detail::tracking<T>({&x, &state.gamma, &state.beta})) {
    detail::mark_traced(out);
    tr->record([xn = x.node_ptr(), gn = state.gamma.node_ptr(), bn = state.beta.node_ptr(),
                on = out.node_ptr(), xhat = std::move(xhat), inv_std = std::move(inv_std), n, c,
                hw, m, mode] {
      auto* gx = xn->requires_grad ? xn.get() : nullptr;
      auto* gg = gn->requires_grad ? gn.get() : nullptr;
      auto* gbeta = bn->requires_grad ? bn.get() : nullptr;
      if (!begin_backward<T>(on, {gx, gg, gbeta})) return;
      const T* dy = on->grad.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t off = (i * c + ch) * hw;
          for (std::size_t k = 0; k < hw; ++k) {
            sum_dy += dy[off + k];
            sum_dy_xhat += dy[off + k] * xhat[off + k];
          }
        }
        if (gg) gg->grad[ch] += sum_dy_xhat;
        if (gbeta) gbeta->grad[ch] += sum_dy;
        if (!gx) continue;
        const T gamma = gn->data[ch];
        const T inv = inv_std[ch];
        if (mode == Mode::eval) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) gx->grad[off + k] += dy[off + k] * gamma * inv;
          }
          continue;
        }
        // dx = gamma * inv / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
        const T scale = gamma * inv / static_cast<T>(m);
        const T mm = static_cast<T>(m);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t off = (i * c + ch) * hw;
          for (std::size_t k = 0; k < hw; ++k) {
            gx->grad[off + k] += scale * (mm * dy[off + k] - sum_dy - xhat[off + k] * sum_dy_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling

template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride,
                    std::size_t padding) {
  if (x.rank() != 4) throw ShapeError("maxpool2d expects [N,C,H,W]");
  if (kernel == 0 || stride == 0 || 2 * padding > kernel) {
    throw ShapeError("maxpool2d geometry invalid (padding must be at most half the kernel)");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_extent(h, kernel, stride, padding, 1);
  const std::size_t wo = conv_extent(w, kernel, stride, padding, 1);
  Tensor<T> out = Tensor<T>::zeros({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = px + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = SIZE_MAX;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(padding);
          if (iy < 0 || iy >= static_cast<long long>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long long ix =
                static_cast<long long>(ox * stride + kx) - static_cast<long long>(padding);
            if (ix < 0 || ix >= static_cast<long long>(w)) continue;
            const std::size_t i = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (best_i == SIZE_MAX || src[i] > best) {
              best = src[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        po[o] = best;
        argmax[o] = plane * h * w + best_i;
      }
    }
  }
  if (auto* tr = detail::tracking<T>({&x})) {
    detail::mark_traced(out);
    tr->record([xn = x.node_ptr(), on = out.node_ptr(), argmax = std::move(argmax)] {
      if (!begin_backward<T>(on, {xn.get()})) return;
      for (std::size_t o = 0; o < argmax.size(); ++o) xn->grad[argmax[o]] += on->grad[o];
    });
  }
  return out;
}

template <class T>
Tensor<T> global_pool(const Tensor<T>& x, PoolKind kind) {
  if (x.rank() != 4) throw ShapeError("global_pool expects [N,C,H,W]");
  return reduce(x, {2, 3}, kind == PoolKind::avg ? ReduceKind::mean : ReduceKind::max, true);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw ShapeError("linear shape mismatch: " + shape_str(x.shape()) + " x " +
                     shape_str(weight.shape()));
  }
  Tensor<T> y = matmul(x, weight);
  if (!bias.defined()) return y;
  if (bias.numel() != weight.dim(1)) throw ShapeError("linear bias length mismatch");
  return add(y, bias);
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N,K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) throw ShapeError("cross_entropy target count mismatch");
  for (std::size_t t : targets) {
    if (t >= k) throw std::out_of_range("cross_entropy target " + std::to_string(t) +
                                        " outside [0," + std::to_string(k) + ")");
  }
  const T* pl = logits.data().data();
  std::vector<T> probs(n * k);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = pl + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  check_finite(out, "cross_entropy");
  if (auto* tr = detail::tracking<T>({&logits})) {
    detail::mark_traced(out);
    tr->record([ln = logits.node_ptr(), on = out.node_ptr(), probs = std::move(probs), targets, n,
                k] {
      if (!begin_backward<T>(on, {ln.get()})) return;
      const T g = on->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = j == targets[i] ? T(1) : T(0);
          ln->grad[i * k + j] += g * (probs[i * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// LayerDump

namespace {

std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_dims(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

}  // namespace

void LayerDump::add(std::string name, std::string kind, Shape in, Shape out, std::size_t params) {
  entries_.push_back({std::move(name), std::move(kind), std::move(in), std::move(out), params});
}

std::size_t LayerDump::total_params() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.params;
  return total;
}

std::string LayerDump::to_text() const {
  std::ostringstream os;
  for (const auto& e : entries_) {
    os << e.name << ' ' << e.kind << ' ' << dims_str(e.in) << ' ' << dims_str(e.out) << ' '
       << e.params << '\n';
  }
  return os.str();
}

LayerDump LayerDump::parse(const std::string& text) {
  LayerDump dump;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Entry e;
    std::string in, out;
    if (!(ls >> e.name >> e.kind >> in >> out >> e.params)) {
      throw std::invalid_argument("malformed layer dump line: " + line);
    }
    e.in = parse_dims(in);
    e.out = parse_dims(out);
    dump.entries_.push_back(std::move(e));
  }
  return dump;
}

// ---------------------------------------------------------------------------
// Layers

template <class T>
Tensor<T> kaiming_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  return Tensor<T>::random(shape, rng, Distribution::normal,
                           std::sqrt(2.0 / static_cast<double>(fan_in)));
}

template <class T>
Conv2d<T>::Conv2d(const Conv2dSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const std::size_t fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
  weight = kaiming_normal<T>(spec.weight_shape(), fan_in, rng);
  if (spec.bias) bias = Tensor<T>::zeros({spec.out_channels});
}

template <class T>
void Conv2d<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  params.push_back({prefix + ".weight", weight});
  if (bias.defined()) params.push_back({prefix + ".bias", bias});
}

template <class T>
Shape Conv2d<T>::describe(LayerDump& dump, const std::string& name, const Shape& in) const {
  Shape out = spec_.output_shape(in);
  dump.add(name, spec_.groups == 1 ? "conv2d" : "conv2d_grouped", in, out, spec_.param_count());
  return out;
}

template <class T>
DepthwiseSeparableConv<T>::DepthwiseSeparableConv(const Conv2dSpec& dw, const Conv2dSpec& pw,
                                                  Rng& rng) {
  validate_depthwise_separable(dw, pw);
  depthwise = Conv2d<T>(dw, rng);
  pointwise = Conv2d<T>(pw, rng);
}

template <class T>
DepthwiseSeparableConv<T> DepthwiseSeparableConv<T>::make(std::size_t channels,
                                                          std::size_t out_channels,
                                                          std::size_t kernel, std::size_t stride,
                                                          std::size_t dilation, Rng& rng) {
  const Conv2dSpec dw = Conv2dSpec::square(channels, channels, kernel, stride,
                                           dilation * (kernel - 1) / 2, dilation, channels);
  const Conv2dSpec pw = Conv2dSpec::square(channels, out_channels, 1);
  return DepthwiseSeparableConv(dw, pw, rng);
}

template <class T>
Tensor<T> DepthwiseSeparableConv<T>::operator()(const Tensor<T>& x) const {
  return pointwise(depthwise(x));
}

template <class T>
void DepthwiseSeparableConv<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  depthwise.collect(prefix + ".depthwise", params);
  pointwise.collect(prefix + ".pointwise", params);
}

template <class T>
Shape DepthwiseSeparableConv<T>::describe(LayerDump& dump, const std::string& name,
                                          const Shape& in) const {
  return pointwise.describe(dump, name + ".pointwise",
                            depthwise.describe(dump, name + ".depthwise", in));
}

template <class T>
void BatchNorm2d<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  params.push_back({prefix + ".gamma", state.gamma});
  params.push_back({prefix + ".beta", state.beta});
}

template <class T>
void BatchNorm2d<T>::collect_buffers(const std::string& prefix, TensorList<T>& buffers) const {
  buffers.push_back({prefix + ".running_mean", state.running_mean});
  buffers.push_back({prefix + ".running_var", state.running_var});
}

template <class T>
Shape BatchNorm2d<T>::describe(LayerDump& dump, const std::string& name, const Shape& in) const {
  dump.add(name, "batchnorm2d", in, in, param_count());
  return in;
}

template <class T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng) {
  weight = kaiming_normal<T>({in_features, out_features}, in_features, rng);
  if (with_bias) bias = Tensor<T>::zeros({out_features});
}

template <class T>
void Linear<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  params.push_back({prefix + ".weight", weight});
  if (bias.defined()) params.push_back({prefix + ".bias", bias});
}

template <class T>
Shape Linear<T>::describe(LayerDump& dump, const std::string& name, const Shape& in) const {
  if (shape_numel(in) != weight.dim(0)) throw ShapeError("linear input features mismatch");
  Shape out{weight.dim(1)};
  dump.add(name, "linear", in, out, param_count());
  return out;
}

#define CBAMNET_INSTANTIATE_LAYERS(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                            const Conv2dSpec&);                                                    \
  template Tensor<T> depthwise_separable_conv(const Tensor<T>&, const Tensor<T>&,                  \
                                              const Conv2dSpec&, const Tensor<T>&,                 \
                                              const Conv2dSpec&);                                  \
  template struct BatchNormState<T>;                                                               \
  template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNormState<T>&, Mode);                      \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> global_pool(const Tensor<T>&, PoolKind);                                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> kaiming_normal(const Shape&, std::size_t, Rng&);                              \
  template class Conv2d<T>;                                                                        \
  template class DepthwiseSeparableConv<T>;                                                        \
  template class BatchNorm2d<T>;                                                                   \
  template class Linear<T>;

CBAMNET_INSTANTIATE_LAYERS(float)
CBAMNET_INSTANTIATE_LAYERS(double)

}  // namespace cbamnet
