#include "cbamnet/attention.hpp"

#include <stdexcept>

namespace cbamnet {

void ChannelAttentionSpec::validate() const {
  if (channels == 0 || reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument("channel attention: reduction " + std::to_string(reduction) +
                                " does not divide " + std::to_string(channels) + " channels");
  }
}

void SpatialAttentionSpec::validate() const {
  if (kernel % 2 == 0) throw std::invalid_argument("spatial attention kernel must be odd");
  if (dilation == 0) throw std::invalid_argument("spatial attention dilation must be positive");
}

std::size_t SpatialAttentionSpec::param_count() const {
  const std::size_t taps = kernel * kernel;
  return variant == SpatialVariant::standard ? 2 * taps : 2 * taps + 2;
}

template <class T>
Tensor<T> channel_attention(const Tensor<T>& features, const Tensor<T>& reduce_weight,
                            const Tensor<T>& expand_weight, const ChannelAttentionSpec& spec) {
  spec.validate();
  if (features.rank() != 4 || features.dim(1) != spec.channels) {
    throw ShapeError("channel attention expects [N," + std::to_string(spec.channels) +
                     ",H,W], got " + shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), c = spec.channels;
  auto mlp = [&](const Tensor<T>& v) {
    return matmul(relu(matmul(v, reduce_weight)), expand_weight);
  };
  const Tensor<T> avg = reshape(global_pool(features, PoolKind::avg), {n, c});
  const Tensor<T> mx = reshape(global_pool(features, PoolKind::max), {n, c});
  return reshape(sigmoid(add(mlp(avg), mlp(mx))), {n, c, 1, 1});
}

template <class T>
Tensor<T> spatial_descriptor(const Tensor<T>& features) {
  if (features.rank() != 4) throw ShapeError("spatial attention expects [N,C,H,W]");
  return concat<T>({reduce(features, {1}, ReduceKind::mean, true),
                    reduce(features, {1}, ReduceKind::max, true)},
                   1);
}

template <class T>
ChannelAttention<T>::ChannelAttention(const ChannelAttentionSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  reduce_weight = kaiming_normal<T>({spec.channels, spec.hidden()}, spec.channels, rng);
  expand_weight = kaiming_normal<T>({spec.hidden(), spec.channels}, spec.hidden(), rng);
}

template <class T>
void ChannelAttention<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  params.push_back({prefix + ".mlp_reduce", reduce_weight});
  params.push_back({prefix + ".mlp_expand", expand_weight});
}

template <class T>
SpatialAttention<T>::SpatialAttention(const SpatialAttentionSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const std::size_t k = spec.kernel, d = spec.dilation, p = spec.padding();
  if (spec.variant == SpatialVariant::standard) {
    conv = Conv2d<T>(Conv2dSpec::square(2, 1, k, 1, p, d), rng);
  } else {
    depthwise = Conv2d<T>(Conv2dSpec::square(2, 2, k, 1, p, d, 2), rng);
    pointwise = Conv2d<T>(Conv2dSpec::square(2, 1, 1), rng);
  }
}

template <class T>
Tensor<T> SpatialAttention<T>::gate(const Tensor<T>& features) const {
  const Tensor<T> desc = spatial_descriptor(features);
  if (spec_.variant == SpatialVariant::standard) return sigmoid(conv(desc));
  return sigmoid(pointwise(depthwise(desc)));
}

template <class T>
void SpatialAttention<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  if (spec_.variant == SpatialVariant::standard) {
    conv.collect(prefix + ".conv", params);
  } else {
    depthwise.collect(prefix + ".depthwise", params);
    pointwise.collect(prefix + ".pointwise", params);
  }
}

namespace {

template <class T>
AttentionOutput<T> apply_gates(const Tensor<T>& features, const ChannelAttention<T>& channel,
                               const SpatialAttention<T>& spatial) {
  if (features.rank() != 4 || features.dim(1) != channel.spec().channels) {
    throw ShapeError("attention block expects " + std::to_string(channel.spec().channels) +
                     " channels, got " + shape_str(features.shape()));
  }
  AttentionOutput<T> out;
  out.channel_gate = channel.gate(features);
  const Tensor<T> refined = mul(features, out.channel_gate);
  out.spatial_gate = spatial.gate(refined);
  out.features = mul(refined, out.spatial_gate);
  return out;
}

}  // namespace

template <class T>
AttentionOutput<T> cbam_apply(const Tensor<T>& features, const ChannelAttention<T>& channel,
                              const SpatialAttention<T>& spatial) {
  return apply_gates(features, channel, spatial);
}

template <class T>
AttentionOutput<T> improved_cbam_apply(const Tensor<T>& features,
                                       const ChannelAttention<T>& channel,
                                       const SpatialAttention<T>& spatial) {
  if (spatial.spec().variant != SpatialVariant::improved) {
    throw std::invalid_argument("improved_cbam_apply needs an improved spatial branch");
  }
  return apply_gates(features, channel, spatial);
}

template <class T>
Cbam<T>::Cbam(std::size_t channels, const AttentionConfig& config, Rng& rng)
    : bypass(config.bypass),
      channel(ChannelAttentionSpec{channels, config.reduction}, rng),
      spatial(config.spatial, rng) {}

template <class T>
AttentionOutput<T> Cbam<T>::operator()(const Tensor<T>& features) const {
  if (!bypass) return apply_gates(features, channel, spatial);
  const std::size_t n = features.dim(0), c = features.dim(1);
  AttentionOutput<T> out;
  out.channel_gate = Tensor<T>::ones({n, c, 1, 1});
  out.spatial_gate = Tensor<T>::ones({n, 1, features.dim(2), features.dim(3)});
  out.features = mul(mul(features, out.channel_gate), out.spatial_gate);
  return out;
}

template <class T>
void Cbam<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  channel.collect(prefix + ".channel", params);
  spatial.collect(prefix + ".spatial", params);
}

template <class T>
Shape Cbam<T>::describe(LayerDump& dump, const std::string& name, const Shape& in) const {
  const std::size_t c = channel.spec().channels;
  dump.add(name + ".channel", "channel_attention", in, {c, 1, 1}, channel.param_count());
  dump.add(name + ".spatial",
           spatial.spec().variant == SpatialVariant::standard ? "spatial_attention"
                                                              : "spatial_attention_improved",
           in, {1, in[1], in[2]}, spatial.param_count());
  return in;
}

#define CBAMNET_INSTANTIATE_ATTENTION(T)                                                          \
  template Tensor<T> channel_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                       const ChannelAttentionSpec&);                              \
  template Tensor<T> spatial_descriptor(const Tensor<T>&);                                        \
  template class ChannelAttention<T>;                                                             \
  template class SpatialAttention<T>;                                                             \
  template AttentionOutput<T> cbam_apply(const Tensor<T>&, const ChannelAttention<T>&,            \
                                         const SpatialAttention<T>&);                             \
  template AttentionOutput<T> improved_cbam_apply(const Tensor<T>&, const ChannelAttention<T>&,   \
                                                  const SpatialAttention<T>&);                    \
  template class Cbam<T>;

CBAMNET_INSTANTIATE_ATTENTION(float)
CBAMNET_INSTANTIATE_ATTENTION(double)

}  // namespace cbamnet
