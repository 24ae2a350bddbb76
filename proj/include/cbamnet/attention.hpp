#pragma once

#include "cbamnet/layers.hpp"

namespace cbamnet {

struct ChannelAttentionSpec {
  std::size_t channels = 0;
  std::size_t reduction = 16;

  /// Throws std::invalid_argument unless reduction divides channels.
  void validate() const;
  std::size_t hidden() const { return channels / reduction; }
};

enum class SpatialVariant { standard, improved };

struct SpatialAttentionSpec {
  std::size_t kernel = 7;
  std::size_t dilation = 1;
  SpatialVariant variant = SpatialVariant::standard;

  static SpatialAttentionSpec standard() { return {7, 1, SpatialVariant::standard}; }
  /// Depthwise-separable dilated formulation: 7x7 depthwise at dilation 2,
  /// then a 1x1 pointwise projection to one channel.
  static SpatialAttentionSpec improved() { return {7, 2, SpatialVariant::improved}; }

  void validate() const;
  /// Keeps the output the same size as the input: d(k-1)/2.
  std::size_t padding() const { return dilation * (kernel - 1) / 2; }
  /// d(k-1)+1.
  std::size_t receptive_field() const { return dilation * (kernel - 1) + 1; }
  std::size_t param_count() const;
};

/// sigmoid(MLP(avgpool F) + MLP(maxpool F)) with one shared bias-free MLP
/// C -> C/r -> C and ReLU between the maps. Returns [N,C,1,1].
template <class T>
Tensor<T> channel_attention(const Tensor<T>& features, const Tensor<T>& reduce_weight,
                            const Tensor<T>& expand_weight, const ChannelAttentionSpec& spec);

/// Two-channel map [mean over C; max over C], shape [N,2,H,W].
template <class T>
Tensor<T> spatial_descriptor(const Tensor<T>& features);

template <class T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(const ChannelAttentionSpec& spec, Rng& rng);

  Tensor<T> gate(const Tensor<T>& features) const {
    return channel_attention(features, reduce_weight, expand_weight, spec_);
  }
  const ChannelAttentionSpec& spec() const { return spec_; }
  std::size_t param_count() const { return reduce_weight.numel() + expand_weight.numel(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;

  Tensor<T> reduce_weight;  // [C, C/r]
  Tensor<T> expand_weight;  // [C/r, C]

 private:
  ChannelAttentionSpec spec_;
};

template <class T>
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(const SpatialAttentionSpec& spec, Rng& rng);

  /// [N,1,H,W] gate in (0,1).
  Tensor<T> gate(const Tensor<T>& features) const;
  const SpatialAttentionSpec& spec() const { return spec_; }
  std::size_t param_count() const { return spec_.param_count(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;

  Conv2d<T> conv;       // standard: 2 -> 1, k x k
  Conv2d<T> depthwise;  // improved: 2 -> 2 per channel, dilated
  Conv2d<T> pointwise;  // improved: 2 -> 1

 private:
  SpatialAttentionSpec spec_;
};

template <class T>
struct AttentionOutput {
  Tensor<T> features;
  Tensor<T> channel_gate;  // [N,C,1,1]
  Tensor<T> spatial_gate;  // [N,1,H,W]
};

/// F' = F * channel_gate, F'' = F' * spatial_gate(F').
template <class T>
AttentionOutput<T> cbam_apply(const Tensor<T>& features, const ChannelAttention<T>& channel,
                              const SpatialAttention<T>& spatial);

/// cbam_apply with a spatial branch of the improved variant.
template <class T>
AttentionOutput<T> improved_cbam_apply(const Tensor<T>& features,
                                       const ChannelAttention<T>& channel,
                                       const SpatialAttention<T>& spatial);

struct AttentionConfig {
  std::size_t reduction = 16;
  SpatialAttentionSpec spatial = SpatialAttentionSpec::standard();
  /// Forces both gates to exactly 1.
  bool bypass = false;
};

/// Channel-then-spatial attention block appended to a residual branch.
template <class T>
class Cbam {
 public:
  Cbam() = default;
  Cbam(std::size_t channels, const AttentionConfig& config, Rng& rng);

  AttentionOutput<T> operator()(const Tensor<T>& features) const;
  std::size_t param_count() const { return channel.param_count() + spatial.param_count(); }
  void collect(const std::string& prefix, TensorList<T>& params) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& in) const;

  bool bypass = false;
  ChannelAttention<T> channel;
  SpatialAttention<T> spatial;
};

}  // namespace cbamnet
