#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "cbamnet/model.hpp"
#include "doctest.h"

using namespace cbamnet;

namespace {

using TF = Tensor<float>;

std::uint64_t checksum(const Model<float>& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : m.parameters()) {
    for (float v : p.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      h = (h ^ bits) * 1099511628211ull;
    }
  }
  return h;
}

const LayerDump::Entry& entry(const LayerDump& d, const std::string& name) {
  for (const auto& e : d.entries()) {
    if (e.name == name) return e;
  }
  throw std::runtime_error("no layer " + name);
}

bool same(const TF& a, const TF& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Independent count for one dump line, from its kind and shapes.
std::size_t recount(const LayerDump::Entry& e, const ModelConfig& cfg) {
  if (e.kind == "batchnorm2d") return 2 * e.in[0];
  if (e.kind == "conv2d" || e.kind == "conv2d_grouped") {
    // Kernel side from the name: stems are 7x7, conv2 / depthwise / smooth are 3x3.
    std::size_t k = 1;
    if (e.name == "stem.conv") k = 7;
    else if (e.name.ends_with(".conv2") || e.name.ends_with(".depthwise")) k = 3;
    const std::size_t cin = e.kind == "conv2d_grouped" ? 1 : e.in[0];
    return e.out[0] * cin * k * k;
  }
  if (e.kind == "channel_attention") return 2 * e.in[0] * (e.in[0] / cfg.attention_reduction);
  if (e.kind == "spatial_attention") return 2 * cfg.attention_kernel * cfg.attention_kernel;
  if (e.kind == "spatial_attention_improved") return 2 * cfg.attention_kernel * cfg.attention_kernel + 2;
  if (e.kind == "linear") return (e.in[0] + 1) * e.out[0];
  return 0;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("resnet50-class shapes") {
  const auto base = Model<float>::build(ModelConfig::resnet50(Variant::baseline), 1);
  const auto d = base.layer_dump();
  const std::size_t blocks[] = {3, 4, 6, 3};
  const std::size_t sizes[] = {56, 28, 14, 7};
  for (int s = 0; s < 4; ++s) {
    const auto& e = entry(d, "stage" + std::to_string(s + 2) + "." + std::to_string(blocks[s] - 1) + ".add");
    CHECK(e.out == Shape{256u << s, sizes[s], sizes[s]});
  }
  CHECK(entry(d, "head.fc").out == Shape{4});
  // torchvision resnet50 with a 4-way head: 25557032 - 2049000 + 8196.
  CHECK(base.param_count() == 23516228);

  auto ecfg = ModelConfig::resnet50(Variant::enhanced);
  ecfg.enhanced.dilated_stage5 = true;
  ecfg.enhanced.multiscale_fusion = true;
  const auto enh = Model<float>::build(ecfg, 1);
  const auto ed = enh.layer_dump();
  CHECK(entry(ed, "stage5.2.add").out == Shape{2048, 14, 14});
  CHECK(entry(ed, "stage3.3.add").out == Shape{512, 28, 28});
  CHECK(entry(ed, "stage4.5.add").out == Shape{1024, 14, 14});
  CHECK(entry(ed, "fusion.smooth.pointwise").out == Shape{256, 28, 28});
  CHECK(entry(ed, "head.fc").out == Shape{4});
}

TEST_CASE("parameter counts agree with the layer dump") {
  for (auto v : {Variant::baseline, Variant::cbam, Variant::enhanced}) {
    for (const auto& cfg : {ModelConfig::resnet50(v), ModelConfig::tiny(v)}) {
      const auto m = Model<float>::build(cfg, 3);
      const auto dump = LayerDump::parse(m.layer_dump().to_text());
      std::size_t listed = 0, independent = 0;
      for (const auto& e : dump.entries()) {
        listed += e.params;
        CHECK_MESSAGE(recount(e, cfg) == e.params, e.name);
        independent += recount(e, cfg);
      }
      CHECK(listed == m.param_count());
      CHECK(independent == m.param_count());
      std::size_t by_part = 0;
      for (const auto& [name, n] : m.param_breakdown()) by_part += n;
      CHECK(by_part == m.param_count());
      std::size_t tensors = 0;
      for (const auto& p : m.parameters()) tensors += p.tensor.numel();
      CHECK(tensors == m.param_count());
    }
  }
}

TEST_CASE("separable replacement shrinks a block") {
  auto plain = ModelConfig::resnet50(Variant::baseline);
  auto sep = plain;
  sep.enhanced.dwsep_stages = {4};
  const auto a = Model<float>::build(plain, 1), b = Model<float>::build(sep, 1);
  const auto pa = a.param_breakdown(), pb = b.param_breakdown();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first == "stage4") CHECK(pb[i].second < pa[i].second);
    else CHECK(pb[i].second == pa[i].second);
  }
}

TEST_CASE("deterministic initialization") {
  const auto cfg = ModelConfig::tiny(Variant::enhanced);
  CHECK(checksum(Model<float>::build(cfg, 5)) == checksum(Model<float>::build(cfg, 5)));
  CHECK(checksum(Model<float>::build(cfg, 5)) != checksum(Model<float>::build(cfg, 6)));
}

TEST_CASE("config validation") {
  auto c = ModelConfig::tiny(Variant::enhanced);
  c.enhanced = {};
  CHECK_THROWS(c.validate());
  c = ModelConfig::tiny(Variant::cbam);
  c.attention_stages = {1};
  CHECK_THROWS(c.validate());
  c = ModelConfig::tiny(Variant::baseline);
  c.stage_blocks = {1, 1, 1};
  CHECK_THROWS(c.validate());
  c = ModelConfig::tiny(Variant::baseline);
  CHECK_FALSE(c.attention_at(2));
  c.input_h = 0;
  CHECK_THROWS(c.validate());
  // Fusion needs stage 4 and 5 extents that divide the stage-3 extent.
  c = ModelConfig::tiny(Variant::enhanced);
  c.input_h = c.input_w = 40;
  CHECK_THROWS_AS(Model<float>::build(c, 1), ShapeError);
  c.input_w = 64;
  CHECK_THROWS_AS(Model<float>::build(c, 1), ShapeError);
  c = ModelConfig::tiny(Variant::cbam);
  c.attention_reduction = 5;
  CHECK_THROWS(Model<float>::build(c, 1));

  for (auto v : {Variant::baseline, Variant::cbam, Variant::enhanced}) {
    const auto r = ModelConfig::resnet50(v);
    CHECK(ModelConfig::from_canonical(r.canonical()) == r);
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS(parse_variant("resnet"));
}

TEST_CASE("forward shapes over random configs") {
  Rng rng(17);
  for (int i = 0; i < 12; ++i) {
    ModelConfig c = ModelConfig::tiny(static_cast<Variant>(rng.below(3)));
    for (auto& b : c.stage_blocks) b = 1 + rng.below(2);
    c.base_width = 8 * (1 + rng.below(2));
    c.input_h = 32 + 16 * rng.below(3);
    c.input_w = 32 + 16 * rng.below(3);
    c.num_classes = 2 + rng.below(4);
    c.attention_reduction = 4;
    c.attention_stages.clear();
    for (int s = 2; s <= 5; ++s) {
      if (rng.bernoulli(0.6)) c.attention_stages.insert(s);
    }
    c.enhanced.multiscale_fusion = rng.bernoulli(0.5);
    c.enhanced.dilated_stage5 = rng.bernoulli(0.5);
    c.enhanced.dwsep_stages.clear();
    for (int s = 2; s <= 5; ++s) {
      if (rng.bernoulli(0.4)) c.enhanced.dwsep_stages.insert(s);
    }
    if (c.variant == Variant::enhanced && !c.enhanced.any()) c.enhanced.multiscale_fusion = true;
    c.fusion_width = 16;
    // Fusion upsamples by one integer factor on both axes.
    if (c.enhanced.multiscale_fusion) c.input_w = c.input_h;
    const auto m = Model<float>::build(c, i);
    const TF x = TF::random({2, 3, c.input_h, c.input_w}, RandomFill{Distribution::normal, 1.0, 3});
    for (auto mode : {Mode::train, Mode::eval}) {
      const auto r = m.forward(x, mode);
      CHECK(r.logits.shape() == Shape{2, c.num_classes});
      for (float v : r.logits.data()) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("forward exposes stages and gates") {
  const auto m = Model<float>::build(ModelConfig::tiny(Variant::enhanced), 2);
  const TF x = TF::random({1, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, 1});
  const auto r = m.forward(x, Mode::eval);
  for (const char* s : {"stem", "stage2", "stage3", "stage4", "stage5"}) CHECK_NOTHROW(r.stage(s));
  CHECK(r.gates.size() == 4);
  for (const auto& g : r.gates) {
    for (float v : g.spatial_gate.data()) CHECK((v > 0.0f && v < 1.0f));
  }
  CHECK_THROWS(m.forward(TF::zeros({1, 3, 32, 32}), Mode::eval));
}

TEST_CASE("eval forward is independent of batch companions") {
  auto m = Model<float>::build(ModelConfig::tiny(Variant::cbam), 2);
  for (int i = 0; i < 2; ++i) (void)m.forward(TF::random({4, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, 9u + i}), Mode::train);
  const TF one = TF::random({1, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, 5});
  const TF two = concat<float>({one, one}, 0);
  const TF l = m.forward(two, Mode::eval).logits;
  for (std::size_t k = 0; k < 4; ++k) CHECK(l.data()[k] == l.data()[4 + k]);
}

TEST_CASE("gate bypass reduces to the attention-free skeleton") {
  for (auto v : {Variant::cbam, Variant::enhanced}) {
    auto cfg = ModelConfig::tiny(v);
    cfg.enhanced.multiscale_fusion = false;
    auto attn = Model<float>::build(cfg, 11);
    auto skel = Model<float>::build(cfg.skeleton(), 12);
    CHECK(skel.copy_matching_from(attn) == skel.parameters().size() + skel.buffers().size());
    attn.set_attention_bypass(true);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const TF x = TF::random({2, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, seed});
      CHECK(same(attn.forward(x, Mode::eval).logits, skel.forward(x, Mode::eval).logits));
      CHECK(same(attn.forward(x, Mode::train).logits, skel.forward(x, Mode::train).logits));
    }
  }
}

TEST_CASE("zeroed residual branches leave the shortcut cascade") {
  auto m = Model<double>::build(ModelConfig::tiny(Variant::baseline), 4);
  for (auto& stage : m.stages) {
    for (auto& blk : stage) std::fill(blk.bn3.state.gamma.data().begin(), blk.bn3.state.gamma.data().end(), 0.0);
  }
  const auto x = Tensor<double>::random({2, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, 3});
  const auto r = m.forward(x, Mode::eval);
  Tensor<double> h = r.stage("stem");
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& blk = m.stages[s][0];
    REQUIRE(blk.projection);
    h = relu(blk.proj_bn(blk.proj(h), Mode::eval));
    const auto& got = r.stage("stage" + std::to_string(s + 2));
    for (std::size_t i = 0; i < h.numel(); ++i) CHECK(got.data()[i] == h.data()[i]);
  }
}

TEST_CASE("multiscale fusion") {
  Rng rng(3);
  MultiscaleFusion<double> f({8, 16, 32}, 8, rng);
  const auto s3 = Tensor<double>::random({2, 8, 8, 8}, RandomFill{Distribution::normal, 1.0, 1});
  const auto s4 = Tensor<double>::random({2, 16, 4, 4}, RandomFill{Distribution::normal, 1.0, 2});
  const auto s5 = Tensor<double>::random({2, 32, 2, 2}, RandomFill{Distribution::normal, 1.0, 3});
  CHECK(f(s3, s4, s5).shape() == Shape{2, 8, 8, 8});
  // Dilated stage 5 keeps stage-4 resolution.
  const auto s5d = Tensor<double>::random({2, 32, 4, 4}, RandomFill{Distribution::normal, 1.0, 4});
  CHECK(f(s3, s4, s5d).shape() == Shape{2, 8, 8, 8});

  auto zero = [](Tensor<double>& t) { std::fill(t.data().begin(), t.data().end(), 0.0); };
  zero(f.laterals[1].weight);
  zero(f.laterals[2].weight);
  const auto only3 = f(s3, s4, s5);
  const auto expect = f.smooth(f.laterals[0](s3));
  for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(only3.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
  zero(f.laterals[0].weight);
  const auto none = f(s3, s4, s5);
  for (double v : none.data()) CHECK(v == 0.0);
  CHECK_THROWS(f(s3, slice(s4, 0, 0, 1), s5));
}

TEST_CASE("every parameter receives a gradient") {
  for (auto v : {Variant::baseline, Variant::cbam, Variant::enhanced}) {
    auto cfg = ModelConfig::tiny(v);
    cfg.enhanced.multiscale_fusion = true;
    cfg.enhanced.dilated_stage5 = true;
    const auto m = Model<float>::build(cfg, 8);
    const auto params = m.parameters();
    for (const auto& p : params) p.tensor.node().requires_grad = true;
    {
      Trace<float> tr;
      const TF x = TF::random({2, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, 1});
      tr.backward(cross_entropy(m.forward(x, Mode::train).logits, {0, 1}));
    }
    for (const auto& p : params) {
      CHECK_MESSAGE(p.tensor.has_grad(), p.name);
      p.tensor.node().requires_grad = false;
      p.tensor.node().grad.clear();
    }
  }
}

}  // TEST_SUITE
