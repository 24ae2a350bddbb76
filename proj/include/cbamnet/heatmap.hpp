#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "cbamnet/data.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

enum class HeatmapMethod { spatial_gate, gradcam };

std::string to_string(HeatmapMethod m);
HeatmapMethod parse_heatmap_method(const std::string& name);

/// Maps are single-channel Images with values in [0,1].

/// Spatial gate of the last attention block in `stage` (0 = last attention
/// block of the network), bilinearly upsampled to the input extents.
/// x: [1,3,H,W] preprocessed input.
template <class T>
Image spatial_gate_map(const Model<T>& model, const Tensor<T>& x, int stage = 0);

/// relu(sum_c w_c A_c) with w_c the spatial mean of d logit[target] / dA_c,
/// upsampled to the input extents and min-max normalized (a constant map
/// becomes all zeros). `stage` names a ForwardResult stage ("stage5" by
/// default); an absent target means the predicted class.
template <class T>
Image gradcam_map(const Model<T>& model, const Tensor<T>& x, const std::string& stage = "stage5",
                  std::optional<std::size_t> target = std::nullopt);

/// Grad-CAM at the stage's own resolution, before upsampling and normalization.
template <class T>
Tensor<T> gradcam_raw(const Model<T>& model, const Tensor<T>& x, const std::string& stage,
                      std::size_t target);

/// Three stops: 0 blue, 0.5 yellow, 1 red, linear in between.
std::array<float, 3> heat_colour(float v);
/// 0.5 * gray(img) + 0.5 * colour(map); map must match the image extents.
Image overlay(const Image& img, const Image& map);
void overlay_emit(const Image& img, const Image& map, const std::filesystem::path& out);

}  // namespace cbamnet
