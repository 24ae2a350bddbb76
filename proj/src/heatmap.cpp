#include "cbamnet/heatmap.hpp"

#include <algorithm>
#include <stdexcept>

#include "cbamnet/trace.hpp"

namespace cbamnet {

std::string to_string(HeatmapMethod m) {
  return m == HeatmapMethod::spatial_gate ? "spatial-gate" : "gradcam";
}

HeatmapMethod parse_heatmap_method(const std::string& name) {
  if (name == "spatial-gate") return HeatmapMethod::spatial_gate;
  if (name == "gradcam") return HeatmapMethod::gradcam;
  throw std::invalid_argument("unknown heatmap method '" + name + "' (spatial-gate|gradcam)");
}

namespace {

template <class T>
Image to_map(const Tensor<T>& hw) {
  Image img = Image::blank(hw.dim(0), hw.dim(1), 0.0f, 1);
  auto d = hw.data();
  for (std::size_t i = 0; i < d.size(); ++i) img.values[i] = static_cast<float>(d[i]);
  return img;
}

template <class T>
void check_input(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != 3) {
    throw ShapeError("heatmap input must be [1,3,H,W], got " + shape_str(x.shape()));
  }
}

}  // namespace

template <class T>
Image spatial_gate_map(const Model<T>& model, const Tensor<T>& x, int stage) {
  check_input(x);
  if (model.config().variant == Variant::baseline) {
    throw std::invalid_argument("spatial-gate heatmaps need an attention variant (model is baseline)");
  }
  NoTrace<T> guard;
  const ForwardResult<T> r = model.forward(x, Mode::eval);
  const GateRecord<T>* pick = nullptr;
  for (const auto& g : r.gates) {
    if (stage == 0 || g.stage == stage) pick = &g;
  }
  if (!pick) throw std::invalid_argument("stage " + std::to_string(stage) + " has no attention block");
  const Tensor<T>& gate = pick->spatial_gate;  // [1,1,Hs,Ws]
  const Image small = to_map(reshape(gate, {gate.dim(2), gate.dim(3)}));
  Image map = resize_bilinear(small, x.dim(2), x.dim(3));
  for (float& v : map.values) v = std::clamp(v, 0.0f, 1.0f);
  return map;
}

template <class T>
Tensor<T> gradcam_raw(const Model<T>& model, const Tensor<T>& x, const std::string& stage,
                      std::size_t target) {
  check_input(x);
  Tensor<T> input = x.clone();
  input.set_requires_grad();
  Trace<T> trace;
  const ForwardResult<T> r = model.forward(input, Mode::eval);
  if (target >= r.logits.dim(1)) throw std::out_of_range("target class out of range");
  const Tensor<T>& act = r.stage(stage);
  trace.backward(sum(slice(r.logits, 1, target, target + 1)));
  const std::size_t c = act.dim(1), h = act.dim(2), w = act.dim(3), p = h * w;
  Tensor<T> cam = Tensor<T>::zeros({h, w});
  if (!act.has_grad()) return cam;  // target logit does not depend on this stage
  auto a = act.data();
  auto g = act.grad();
  auto out = cam.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t i = 0; i < p; ++i) mean += g[ch * p + i];
    const T wc = static_cast<T>(mean / static_cast<double>(p));
    for (std::size_t i = 0; i < p; ++i) out[i] += wc * a[ch * p + i];
  }
  for (auto& v : out) v = std::max(v, T(0));
  return cam;
}

template <class T>
Image gradcam_map(const Model<T>& model, const Tensor<T>& x, const std::string& stage,
                  std::optional<std::size_t> target) {
  check_input(x);
  std::size_t cls = 0;
  if (target) {
    cls = *target;
  } else {
    NoTrace<T> guard;
    const Tensor<T> logits = model.forward(x, Mode::eval).logits;
    auto row = logits.data();
    cls = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  Image map = resize_bilinear(to_map(gradcam_raw(model, x, stage, cls)), x.dim(2), x.dim(3));
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const float mn = *lo, range = *hi - *lo;
  for (float& v : map.values) v = range > 0.0f ? (v - mn) / range : 0.0f;
  return map;
}

std::array<float, 3> heat_colour(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  if (v <= 0.5f) {
    const float t = v / 0.5f;  // blue -> yellow
    return {t, t, 1.0f - t};
  }
  const float t = (v - 0.5f) / 0.5f;  // yellow -> red
  return {1.0f, 1.0f - t, 0.0f};
}

Image overlay(const Image& img, const Image& map) {
  if (img.channels != 3 || map.channels != 1 || img.height != map.height || img.width != map.width) {
    throw ShapeError("overlay: map extents must match the 3-channel image");
  }
  Image out = Image::blank(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const float gray = std::clamp(
          0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x), 0.0f, 1.0f);
      const auto colour = heat_colour(map.at(0, y, x));
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = 0.5f * gray + 0.5f * colour[c];
    }
  }
  return out;
}

void overlay_emit(const Image& img, const Image& map, const std::filesystem::path& out) {
  write_ppm(out, overlay(img, map));
}

template Image spatial_gate_map(const Model<float>&, const Tensor<float>&, int);
template Image spatial_gate_map(const Model<double>&, const Tensor<double>&, int);
template Tensor<float> gradcam_raw(const Model<float>&, const Tensor<float>&, const std::string&,
                                   std::size_t);
template Tensor<double> gradcam_raw(const Model<double>&, const Tensor<double>&, const std::string&,
                                    std::size_t);
template Image gradcam_map(const Model<float>&, const Tensor<float>&, const std::string&,
                           std::optional<std::size_t>);
template Image gradcam_map(const Model<double>&, const Tensor<double>&, const std::string&,
                           std::optional<std::size_t>);

}  // namespace cbamnet
