#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cbamnet/attention.hpp"
#include "cbamnet/layers.hpp"

namespace cbamnet {

enum class Variant { baseline, cbam, enhanced };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct EnhancedFlags {
  bool multiscale_fusion = false;
  std::set<int> dwsep_stages;  // subset of {2,3,4,5}
  bool dilated_stage5 = false;

  bool any() const { return multiscale_fusion || !dwsep_stages.empty() || dilated_stage5; }
  bool operator==(const EnhancedFlags&) const = default;
};

/// Declarative architecture description. Stages are numbered 2..5 after the
/// ResNet convention (stage 1 is the stem).
struct ModelConfig {
  Variant variant = Variant::baseline;
  std::vector<std::size_t> stage_blocks{3, 4, 6, 3};
  std::size_t base_width = 64;
  std::size_t num_classes = 4;
  std::size_t input_h = 224;
  std::size_t input_w = 224;
  std::size_t attention_reduction = 16;
  std::size_t attention_kernel = 7;
  std::set<int> attention_stages{2, 3, 4, 5};
  bool attention_bypass = false;
  EnhancedFlags enhanced;
  std::size_t fusion_width = 256;

  /// ResNet50-class defaults for a variant.
  static ModelConfig resnet50(Variant v);
  /// Desk-scale preset: one block per stage, width 16, 64x64 input.
  static ModelConfig tiny(Variant v);

  /// Throws std::invalid_argument on violated invariants.
  void validate() const;
  bool attention_at(int stage) const {
    return variant != Variant::baseline && attention_stages.count(stage) > 0;
  }
  AttentionConfig attention_config() const;
  /// Same structure without attention blocks.
  ModelConfig skeleton() const;

  /// Sorted key=value lines; the identity used by checkpoints.
  std::string canonical() const;
  static ModelConfig from_canonical(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// ResNet bottleneck: 1x1 reduce, 3x3 spatial, 1x1 expand x4, each with
/// batchnorm, optional attention on the main path before the shortcut add.
template <class T>
struct Bottleneck {
  Conv2d<T> conv1;
  BatchNorm2d<T> bn1;
  Conv2d<T> conv2;                      // when !separable
  DepthwiseSeparableConv<T> conv2_sep;  // when separable
  BatchNorm2d<T> bn2;
  Conv2d<T> conv3;
  BatchNorm2d<T> bn3;
  bool separable = false;
  bool projection = false;
  Conv2d<T> proj;
  BatchNorm2d<T> proj_bn;
  std::optional<Cbam<T>> attention;

  std::size_t out_channels() const { return conv3.spec().out_channels; }
};

template <class T>
struct GateRecord {
  std::string block;
  int stage = 0;
  Tensor<T> channel_gate;
  Tensor<T> spatial_gate;
};

template <class T>
struct ForwardResult {
  Tensor<T> logits;
  /// stem, stage2..stage5 and, when fusion is on, fused.
  std::vector<NamedTensor<T>> stages;
  std::vector<GateRecord<T>> gates;

  const Tensor<T>& stage(const std::string& name) const;
};

/// Lateral 1x1 projections of stages 3-5 to a common width, nearest
/// upsampling to stage-3 resolution, summation, then a 3x3 depthwise
/// separable convolution.
template <class T>
class MultiscaleFusion {
 public:
  MultiscaleFusion() = default;
  MultiscaleFusion(const std::vector<std::size_t>& stage_channels, std::size_t width, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& stage3, const Tensor<T>& stage4,
                       const Tensor<T>& stage5) const;
  std::size_t param_count() const;
  void collect(const std::string& prefix, TensorList<T>& params) const;
  Shape describe(LayerDump& dump, const std::string& name, const Shape& s3, const Shape& s4,
                 const Shape& s5) const;

  std::vector<Conv2d<T>> laterals;
  DepthwiseSeparableConv<T> smooth;
};

template <class T>
Tensor<T> multiscale_fuse(const MultiscaleFusion<T>& fusion, const Tensor<T>& stage3,
                          const Tensor<T>& stage4, const Tensor<T>& stage5);

template <class T>
class Model {
 public:
  /// Deterministic initialization: one generator seeded with `seed`,
  /// consumed in construction order.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// x: [N,3,H,W] at the configured input size. Returns raw logits [N,K].
  ForwardResult<T> forward(const Tensor<T>& x, Mode mode) const;

  const ModelConfig& config() const { return config_; }
  TensorList<T> parameters() const;
  /// Batchnorm running statistics.
  TensorList<T> buffers() const;
  std::size_t param_count() const;
  /// Learnable scalar counts keyed by top-level component (stem, stage2..5,
  /// fusion, head), in model order.
  std::vector<std::pair<std::string, std::size_t>> param_breakdown() const;
  /// Shape-arithmetic walk over the layer list.
  LayerDump layer_dump() const;

  void set_attention_bypass(bool bypass);
  /// Copies values of every parameter and buffer whose name also exists in
  /// `other`; returns how many tensors were copied.
  std::size_t copy_matching_from(const Model& other);

  // Components, exposed for tests and tooling.
  Conv2d<T> stem_conv;
  BatchNorm2d<T> stem_bn;
  std::vector<std::vector<Bottleneck<T>>> stages;  // stages[0] is stage2
  std::optional<MultiscaleFusion<T>> fusion;
  Linear<T> head;

 private:
  Model() = default;
  ModelConfig config_;
};

}  // namespace cbamnet
