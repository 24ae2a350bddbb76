#pragma once

#include <string>
#include <vector>

#include "cbamnet/ops.hpp"
#include "cbamnet/tensor.hpp"

namespace cbamnet {

enum class Mode { train, eval };

/// Geometry of a 2-D convolution. Cross-correlation, zero padding.
struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t dilation_h = 1, dilation_w = 1;
  std::size_t groups = 1;
  bool bias = false;

  /// Square kernel/stride/pad/dilation shorthand.
  static Conv2dSpec square(std::size_t in, std::size_t out, std::size_t kernel,
                           std::size_t stride = 1, std::size_t pad = 0, std::size_t dilation = 1,
                           std::size_t groups = 1, bool bias = false);

  void validate() const;
  /// floor((H + 2p - d(k-1) - 1) / s) + 1; throws ShapeError when < 1.
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
  Shape weight_shape() const;
  std::size_t weight_count() const;
  std::size_t param_count() const { return weight_count() + (bias ? out_channels : 0); }
  /// Output shape for an [N,C,H,W] or [C,H,W] input.
  Shape output_shape(const Shape& in) const;

  bool operator==(const Conv2dSpec&) const = default;
};

/// x: [N,C,H,W]; weight: [C_out, C/groups, kh, kw]; bias: [C_out] or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dSpec& spec);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

template <class T>
struct BatchNormState {
  Tensor<T> gamma;         // [C], learnable
  Tensor<T> beta;          // [C], learnable
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C], unbiased batch variance average
  BatchNormOptions options;

  static BatchNormState fresh(std::size_t channels, BatchNormOptions options = {});
  std::size_t channels() const { return gamma.numel(); }
};

/// Train mode normalizes with batch statistics over (N,H,W) and updates the
/// running averages; eval mode uses the running statistics only.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state, Mode mode);

/// Window max with -inf padding; backward routes to the first argmax.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride,
                    std::size_t padding);

enum class PoolKind { avg, max };

/// [N,C,H,W] -> [N,C,1,1].
template <class T>
Tensor<T> global_pool(const Tensor<T>& x, PoolKind kind);

/// x: [N,D], weight: [D,K], bias: [K] or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Mean over the batch of -log softmax(logits)[target], log-sum-exp form.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets);

// ---------------------------------------------------------------------------
// Parameter-holding layers.

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using TensorList = std::vector<NamedTensor<T>>;

/// Text description of a layer stack, one line per layer:
/// `name kind shape-in shape-out params`, shapes as CxHxW.
class LayerDump {
 public:
  struct Entry {
    std::string name;
    std::string kind;
    Shape in;
    Shape out;
    std::size_t params = 0;
  };

  void add(std::string name, std::string kind, Shape in, Shape out, std::size_t params);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t total_params() const;
  std::string to_text() const;
  static LayerDump parse(const std::string& text);

 private:
  std::vector<Entry> entries_;
};

/// Kaiming fan-in normal: N(0, 2 / fan_in).
template <class T>
Tensor<T> kaiming_normal(const Shape& shape, std::size_t fan_in, Rng& rng);

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Conv2dSpec& spec, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, spec_); }
  const Conv2dSpec& spec() const { return spec_; }
  std::size_t param_count() const { return spec_.param_count(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& in) const;

  Tensor<T> weight;
  Tensor<T> bias;

 private:
  Conv2dSpec spec_;
};

/// Depthwise k x k convolution followed by a 1x1 pointwise convolution.
template <class T>
class DepthwiseSeparableConv {
 public:
  DepthwiseSeparableConv() = default;
  DepthwiseSeparableConv(const Conv2dSpec& depthwise, const Conv2dSpec& pointwise, Rng& rng);

  /// Depthwise spec with padding d(k-1)/2, then channels -> out_channels.
  static DepthwiseSeparableConv make(std::size_t channels, std::size_t out_channels,
                                     std::size_t kernel, std::size_t stride, std::size_t dilation,
                                     Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  std::size_t param_count() const { return depthwise.param_count() + pointwise.param_count(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& in) const;

  Conv2d<T> depthwise;
  Conv2d<T> pointwise;
};

/// Checks the depthwise/pointwise pairing rules; throws std::invalid_argument.
void validate_depthwise_separable(const Conv2dSpec& depthwise, const Conv2dSpec& pointwise);

template <class T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& dw_weight,
                                   const Conv2dSpec& dw_spec, const Tensor<T>& pw_weight,
                                   const Conv2dSpec& pw_spec);

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, BatchNormOptions options = {})
      : state(BatchNormState<T>::fresh(channels, options)) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const { return batchnorm2d(x, state, mode); }
  std::size_t param_count() const { return 2 * state.channels(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;
  void collect_buffers(const std::string& prefix, TensorList<T>& buffers) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& in) const;

  // Running statistics change during train-mode forward passes.
  mutable BatchNormState<T> state;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, bool bias, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  std::size_t param_count() const { return weight.numel() + (bias.defined() ? bias.numel() : 0); }
  void collect(const std::string& prefix, TensorList<T>& params) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& in) const;

  Tensor<T> weight;  // [D,K]
  Tensor<T> bias;    // [K]
};

}  // namespace cbamnet
