#include "cbamnet/model.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

namespace cbamnet {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::cbam: return "cbam";
    case Variant::enhanced: return "enhanced";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "cbam") return Variant::cbam;
  if (name == "enhanced") return Variant::enhanced;
  throw std::invalid_argument("unknown variant '" + name + "' (baseline, cbam, enhanced)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::resnet50(Variant v) {
  ModelConfig c;
  c.variant = v;
  if (v == Variant::enhanced) {
    c.enhanced.multiscale_fusion = true;
    c.enhanced.dwsep_stages = {4, 5};
    c.enhanced.dilated_stage5 = true;
  }
  return c;
}

ModelConfig ModelConfig::tiny(Variant v) {
  ModelConfig c = resnet50(v);
  c.stage_blocks = {1, 1, 1, 1};
  c.base_width = 16;
  c.input_h = c.input_w = 64;
  c.fusion_width = 64;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (stage_blocks.size() != 4) fail("stage_blocks needs four entries (stages 2-5)");
  for (std::size_t b : stage_blocks) {
    if (b == 0) fail("every stage needs at least one block");
  }
  if (base_width == 0 || num_classes == 0 || input_h == 0 || input_w == 0 || fusion_width == 0) {
    fail("widths, class count and input size must be positive");
  }
  for (int s : attention_stages) {
    if (s < 2 || s > 5) fail("attention stage " + std::to_string(s) + " outside 2..5");
  }
  for (int s : enhanced.dwsep_stages) {
    if (s < 2 || s > 5) fail("dwsep stage " + std::to_string(s) + " outside 2..5");
  }
  if (variant == Variant::enhanced && !enhanced.any()) {
    fail("enhanced variant needs at least one enhancement flag");
  }
  if (attention_kernel % 2 == 0) fail("attention kernel must be odd");
  if (attention_reduction == 0) fail("attention reduction must be positive");
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.reduction = attention_reduction;
  a.spatial = variant == Variant::enhanced ? SpatialAttentionSpec::improved()
                                           : SpatialAttentionSpec::standard();
  a.spatial.kernel = attention_kernel;
  a.bypass = attention_bypass;
  return a;
}

ModelConfig ModelConfig::skeleton() const {
  ModelConfig c = *this;
  c.variant = Variant::baseline;
  return c;
}

namespace {

template <class C>
std::string join(const C& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(std::stoull(part));
  }
  return out;
}

std::set<int> split_stages(const std::string& text) {
  std::set<int> out;
  for (std::size_t v : split_sizes(text)) out.insert(static_cast<int>(v));
  return out;
}

}  // namespace

std::string ModelConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"attention_kernel", std::to_string(attention_kernel)},
      {"attention_reduction", std::to_string(attention_reduction)},
      {"attention_stages", join(attention_stages)},
      {"base_width", std::to_string(base_width)},
      {"dilated_stage5", enhanced.dilated_stage5 ? "1" : "0"},
      {"dwsep_stages", join(enhanced.dwsep_stages)},
      {"fusion_width", std::to_string(fusion_width)},
      {"input_h", std::to_string(input_h)},
      {"input_w", std::to_string(input_w)},
      {"multiscale_fusion", enhanced.multiscale_fusion ? "1" : "0"},
      {"num_classes", std::to_string(num_classes)},
      {"stage_blocks", join(stage_blocks)},
      {"variant", to_string(variant)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

ModelConfig ModelConfig::from_canonical(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed config line: " + line);
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "attention_kernel") c.attention_kernel = std::stoull(v);
    else if (k == "attention_reduction") c.attention_reduction = std::stoull(v);
    else if (k == "attention_stages") c.attention_stages = split_stages(v);
    else if (k == "base_width") c.base_width = std::stoull(v);
    else if (k == "dilated_stage5") c.enhanced.dilated_stage5 = v == "1";
    else if (k == "dwsep_stages") c.enhanced.dwsep_stages = split_stages(v);
    else if (k == "fusion_width") c.fusion_width = std::stoull(v);
    else if (k == "input_h") c.input_h = std::stoull(v);
    else if (k == "input_w") c.input_w = std::stoull(v);
    else if (k == "multiscale_fusion") c.enhanced.multiscale_fusion = v == "1";
    else if (k == "num_classes") c.num_classes = std::stoull(v);
    else if (k == "stage_blocks") c.stage_blocks = split_sizes(v);
    else if (k == "variant") c.variant = parse_variant(v);
    else throw std::invalid_argument("unknown model config key: " + k);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ForwardResult

template <class T>
const Tensor<T>& ForwardResult<T>::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return s.tensor;
  }
  throw std::out_of_range("no stage output named " + name);
}

// ---------------------------------------------------------------------------
// MultiscaleFusion

template <class T>
MultiscaleFusion<T>::MultiscaleFusion(const std::vector<std::size_t>& stage_channels,
                                      std::size_t width, Rng& rng) {
  for (std::size_t c : stage_channels) laterals.emplace_back(Conv2dSpec::square(c, width, 1), rng);
  smooth = DepthwiseSeparableConv<T>::make(width, width, 3, 1, 1, rng);
}

namespace {

std::size_t upsample_factor(std::size_t target, std::size_t extent) {
  if (extent == 0 || target % extent != 0) {
    throw ShapeError("multiscale fusion: extent " + std::to_string(extent) +
                     " does not divide stage-3 extent " + std::to_string(target));
  }
  return target / extent;
}

}  // namespace

template <class T>
Tensor<T> MultiscaleFusion<T>::operator()(const Tensor<T>& stage3, const Tensor<T>& stage4,
                                          const Tensor<T>& stage5) const {
  const std::size_t n = stage3.dim(0);
  if (stage4.dim(0) != n || stage5.dim(0) != n) throw ShapeError("multiscale fusion: batch mismatch");
  const std::size_t h = stage3.dim(2), w = stage3.dim(3);
  Tensor<T> sum = laterals[0](stage3);
  const Tensor<T>* coarse[] = {&stage4, &stage5};
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor<T>& s = *coarse[i];
    const std::size_t f = upsample_factor(h, s.dim(2));
    if (upsample_factor(w, s.dim(3)) != f) throw ShapeError("multiscale fusion: anisotropic scale");
    Tensor<T> lat = laterals[i + 1](s);
    sum = add(sum, f == 1 ? lat : upsample_nearest(lat, f));
  }
  return smooth(sum);
}

template <class T>
std::size_t MultiscaleFusion<T>::param_count() const {
  std::size_t total = smooth.param_count();
  for (const auto& l : laterals) total += l.param_count();
  return total;
}

template <class T>
void MultiscaleFusion<T>::collect(const std::string& prefix, TensorList<T>& params) const {
  for (std::size_t i = 0; i < laterals.size(); ++i) {
    laterals[i].collect(prefix + ".lateral" + std::to_string(i + 3), params);
  }
  smooth.collect(prefix + ".smooth", params);
}

template <class T>
Shape MultiscaleFusion<T>::describe(LayerDump& dump, const std::string& name, const Shape& s3,
                                    const Shape& s4, const Shape& s5) const {
  const Shape out3 = laterals[0].describe(dump, name + ".lateral3", s3);
  const Shape* coarse[] = {&s4, &s5};
  for (std::size_t i = 0; i < 2; ++i) {
    const Shape lat = laterals[i + 1].describe(dump, name + ".lateral" + std::to_string(i + 4),
                                               *coarse[i]);
    const std::size_t f = upsample_factor(out3[1], lat[1]);
    if (upsample_factor(out3[2], lat[2]) != f) throw ShapeError("multiscale fusion: anisotropic scale");
    dump.add(name + ".upsample" + std::to_string(i + 4), "upsample", lat,
             {lat[0], lat[1] * f, lat[2] * f}, 0);
  }
  dump.add(name + ".sum", "add", out3, out3, 0);
  return smooth.describe(dump, name + ".smooth", out3);
}

template <class T>
Tensor<T> multiscale_fuse(const MultiscaleFusion<T>& fusion, const Tensor<T>& stage3,
                          const Tensor<T>& stage4, const Tensor<T>& stage5) {
  return fusion(stage3, stage4, stage5);
}

// ---------------------------------------------------------------------------
// Model

template <class T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(seed);
  const std::size_t bw = config.base_width;
  m.stem_conv = Conv2d<T>(Conv2dSpec::square(3, bw, 7, 2, 3), rng);
  m.stem_bn = BatchNorm2d<T>(bw);
  std::size_t in_ch = bw;
  std::vector<std::size_t> stage_out;
  for (std::size_t si = 0; si < 4; ++si) {
    const int stage = static_cast<int>(si) + 2;
    const std::size_t width = bw << si;
    const std::size_t out_ch = 4 * width;
    std::size_t stride = si == 0 ? 1 : 2;
    std::size_t dilation = 1;
    if (stage == 5 && config.enhanced.dilated_stage5) {
      stride = 1;
      dilation = 2;
    }
    const bool separable = config.enhanced.dwsep_stages.count(stage) > 0;
    std::vector<Bottleneck<T>> blocks;
    for (std::size_t b = 0; b < config.stage_blocks[si]; ++b) {
      const std::size_t s = b == 0 ? stride : 1;
      Bottleneck<T> blk;
      blk.conv1 = Conv2d<T>(Conv2dSpec::square(in_ch, width, 1), rng);
      blk.bn1 = BatchNorm2d<T>(width);
      blk.separable = separable;
      if (separable) {
        blk.conv2_sep = DepthwiseSeparableConv<T>::make(width, width, 3, s, dilation, rng);
      } else {
        blk.conv2 = Conv2d<T>(Conv2dSpec::square(width, width, 3, s, dilation, dilation), rng);
      }
      blk.bn2 = BatchNorm2d<T>(width);
      blk.conv3 = Conv2d<T>(Conv2dSpec::square(width, out_ch, 1), rng);
      blk.bn3 = BatchNorm2d<T>(out_ch);
      if (in_ch != out_ch || s != 1) {
        blk.projection = true;
        blk.proj = Conv2d<T>(Conv2dSpec::square(in_ch, out_ch, 1, s), rng);
        blk.proj_bn = BatchNorm2d<T>(out_ch);
      }
      if (config.attention_at(stage)) blk.attention.emplace(out_ch, config.attention_config(), rng);
      blocks.push_back(std::move(blk));
      in_ch = out_ch;
    }
    m.stages.push_back(std::move(blocks));
    stage_out.push_back(out_ch);
  }
  if (config.enhanced.multiscale_fusion) {
    m.fusion.emplace(std::vector<std::size_t>{stage_out[1], stage_out[2], stage_out[3]},
                     config.fusion_width, rng);
  }
  m.head = Linear<T>(m.fusion ? config.fusion_width : in_ch, config.num_classes, true, rng);
  // Shape walk rejects configurations whose feature maps underflow.
  (void)m.layer_dump();
  return m;
}

namespace {

template <class T>
Tensor<T> run_block(const Bottleneck<T>& blk, const Tensor<T>& x, Mode mode,
                    std::vector<GateRecord<T>>& gates, const std::string& name, int stage) {
  Tensor<T> m = relu(blk.bn1(blk.conv1(x), mode));
  m = relu(blk.bn2(blk.separable ? blk.conv2_sep(m) : blk.conv2(m), mode));
  m = blk.bn3(blk.conv3(m), mode);
  if (blk.attention) {
    AttentionOutput<T> a = (*blk.attention)(m);
    m = a.features;
    gates.push_back({name, stage, a.channel_gate, a.spatial_gate});
  }
  const Tensor<T> shortcut = blk.projection ? blk.proj_bn(blk.proj(x), mode) : x;
  return relu(add(m, shortcut));
}

}  // namespace

template <class T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& x, Mode mode) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_h || x.dim(3) != config_.input_w) {
    throw ShapeError("model input must be [N,3," + std::to_string(config_.input_h) + "," +
                     std::to_string(config_.input_w) + "], got " + shape_str(x.shape()));
  }
  ForwardResult<T> r;
  Tensor<T> h = maxpool2d(relu(stem_bn(stem_conv(x), mode)), 3, 2, 1);
  r.stages.push_back({"stem", h});
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const int stage = static_cast<int>(si) + 2;
    for (std::size_t b = 0; b < stages[si].size(); ++b) {
      h = run_block(stages[si][b], h, mode, r.gates,
                    "stage" + std::to_string(stage) + "." + std::to_string(b), stage);
    }
    r.stages.push_back({"stage" + std::to_string(stage), h});
  }
  Tensor<T> top = h;
  if (fusion) {
    top = (*fusion)(r.stage("stage3"), r.stage("stage4"), r.stage("stage5"));
    r.stages.push_back({"fused", top});
  }
  const Tensor<T> pooled = reshape(global_pool(top, PoolKind::avg), {x.dim(0), top.dim(1)});
  r.logits = head(pooled);
  check_finite(r.logits, "model forward");
  return r;
}

namespace {

template <class T>
void collect_block(const Bottleneck<T>& blk, const std::string& p, TensorList<T>& out) {
  blk.conv1.collect(p + ".conv1", out);
  blk.bn1.collect(p + ".bn1", out);
  if (blk.separable) {
    blk.conv2_sep.collect(p + ".conv2", out);
  } else {
    blk.conv2.collect(p + ".conv2", out);
  }
  blk.bn2.collect(p + ".bn2", out);
  blk.conv3.collect(p + ".conv3", out);
  blk.bn3.collect(p + ".bn3", out);
  if (blk.attention) blk.attention->collect(p + ".attention", out);
  if (blk.projection) {
    blk.proj.collect(p + ".proj", out);
    blk.proj_bn.collect(p + ".proj_bn", out);
  }
}

template <class T>
void collect_block_buffers(const Bottleneck<T>& blk, const std::string& p, TensorList<T>& out) {
  blk.bn1.collect_buffers(p + ".bn1", out);
  blk.bn2.collect_buffers(p + ".bn2", out);
  blk.bn3.collect_buffers(p + ".bn3", out);
  if (blk.projection) blk.proj_bn.collect_buffers(p + ".proj_bn", out);
}

std::string block_name(std::size_t si, std::size_t b) {
  return "stage" + std::to_string(si + 2) + "." + std::to_string(b);
}

}  // namespace

template <class T>
TensorList<T> Model<T>::parameters() const {
  TensorList<T> out;
  stem_conv.collect("stem.conv", out);
  stem_bn.collect("stem.bn", out);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t b = 0; b < stages[si].size(); ++b) collect_block(stages[si][b], block_name(si, b), out);
  }
  if (fusion) fusion->collect("fusion", out);
  head.collect("head", out);
  return out;
}

template <class T>
TensorList<T> Model<T>::buffers() const {
  TensorList<T> out;
  stem_bn.collect_buffers("stem.bn", out);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t b = 0; b < stages[si].size(); ++b) {
      collect_block_buffers(stages[si][b], block_name(si, b), out);
    }
  }
  return out;
}

template <class T>
std::size_t Model<T>::param_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

template <class T>
std::vector<std::pair<std::string, std::size_t>> Model<T>::param_breakdown() const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& p : parameters()) {
    const std::string key = p.name.substr(0, p.name.find('.'));
    if (out.empty() || out.back().first != key) out.emplace_back(key, 0);
    out.back().second += p.tensor.numel();
  }
  return out;
}

template <class T>
LayerDump Model<T>::layer_dump() const {
  LayerDump d;
  Shape s{3, config_.input_h, config_.input_w};
  s = stem_conv.describe(d, "stem.conv", s);
  s = stem_bn.describe(d, "stem.bn", s);
  {
    const Shape in = s;
    if (in[1] + 2 < 3 || in[2] + 2 < 3) throw ShapeError("input too small for stem pooling");
    s = {in[0], (in[1] + 2 - 3) / 2 + 1, (in[2] + 2 - 3) / 2 + 1};
    d.add("stem.pool", "maxpool2d", in, s, 0);
  }
  std::vector<Shape> stage_shapes;
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t b = 0; b < stages[si].size(); ++b) {
      const auto& blk = stages[si][b];
      const std::string p = block_name(si, b);
      const Shape in = s;
      Shape m = blk.conv1.describe(d, p + ".conv1", in);
      m = blk.bn1.describe(d, p + ".bn1", m);
      m = blk.separable ? blk.conv2_sep.describe(d, p + ".conv2", m)
                        : blk.conv2.describe(d, p + ".conv2", m);
      m = blk.bn2.describe(d, p + ".bn2", m);
      m = blk.conv3.describe(d, p + ".conv3", m);
      m = blk.bn3.describe(d, p + ".bn3", m);
      if (blk.attention) m = blk.attention->describe(d, p + ".attention", m);
      Shape sc = in;
      if (blk.projection) {
        sc = blk.proj.describe(d, p + ".proj", in);
        sc = blk.proj_bn.describe(d, p + ".proj_bn", sc);
      }
      if (sc != m) {
        throw ShapeError("block " + p + ": shortcut " + shape_str(sc) + " vs main " + shape_str(m));
      }
      d.add(p + ".add", "residual_add", m, m, 0);
      s = m;
    }
    stage_shapes.push_back(s);
  }
  if (fusion) {
    s = fusion->describe(d, "fusion", stage_shapes[1], stage_shapes[2], stage_shapes[3]);
  }
  d.add("head.pool", "global_avg_pool", s, {s[0]}, 0);
  head.describe(d, "head.fc", {s[0]});
  return d;
}

template <class T>
void Model<T>::set_attention_bypass(bool bypass) {
  config_.attention_bypass = bypass;
  for (auto& stage : stages) {
    for (auto& blk : stage) {
      if (blk.attention) blk.attention->bypass = bypass;
    }
  }
}

template <class T>
std::size_t Model<T>::copy_matching_from(const Model& other) {
  std::map<std::string, Tensor<T>> src;
  for (const auto& p : other.parameters()) src.emplace(p.name, p.tensor);
  for (const auto& b : other.buffers()) src.emplace(b.name, b.tensor);
  std::size_t copied = 0;
  auto copy = [&](const TensorList<T>& dst) {
    for (const auto& p : dst) {
      auto it = src.find(p.name);
      if (it == src.end() || it->second.shape() != p.tensor.shape()) continue;
      auto from = it->second.data();
      auto to = p.tensor.node().data.data();
      std::copy(from.begin(), from.end(), to);
      ++copied;
    }
  };
  copy(parameters());
  copy(buffers());
  return copied;
}

#define CBAMNET_INSTANTIATE_MODEL(T)                                                       \
  template struct ForwardResult<T>;                                                        \
  template class MultiscaleFusion<T>;                                                      \
  template Tensor<T> multiscale_fuse(const MultiscaleFusion<T>&, const Tensor<T>&,         \
                                     const Tensor<T>&, const Tensor<T>&);                  \
  template class Model<T>;

CBAMNET_INSTANTIATE_MODEL(float)
CBAMNET_INSTANTIATE_MODEL(double)

}  // namespace cbamnet
