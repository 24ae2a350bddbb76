#include "cbamnet/sweep.hpp"

#include <algorithm>
#include <functional>

#include "cbamnet/attention.hpp"
#include "cbamnet/gradcheck.hpp"
#include "cbamnet/layers.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

namespace {

using TD = Tensor<double>;

constexpr double kLayerTol = 1e-4;
constexpr double kLinearTol = 1e-6;

TD rnd(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  return TD::random(s, RandomFill{Distribution::normal, scale, seed});
}

// Fixed random projection of `out` to a scalar.
TD project(const TD& out, std::uint64_t seed) { return sum(mul(out, rnd(out.shape(), seed))); }

class Sweep {
 public:
  explicit Sweep(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next() { return mix_seed(seed_, ++counter_); }

  TD input(const Shape& s, double scale = 1.0) { return rnd(s, next(), scale); }

  void check(const std::string& kind, double tol, const std::function<TD()>& loss,
             const std::vector<TD>& tensors, std::size_t per_tensor = 24) {
    const auto probes = probes_for(tensors, per_tensor, next());
    const double err = grad_check(loss, probes);
    auto it = std::find_if(results_.begin(), results_.end(),
                           [&](const SweepResult& r) { return r.kind == kind; });
    if (it == results_.end()) {
      results_.push_back({kind, err, tol, probes.size()});
    } else {
      it->max_rel_err = std::max(it->max_rel_err, err);
      it->probes += probes.size();
    }
  }

  std::vector<SweepResult> results() const { return results_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::vector<SweepResult> results_;
};

void check_model(Sweep& s, Variant v) {
  ModelConfig cfg = ModelConfig::tiny(v);
  cfg.input_h = cfg.input_w = 32;
  auto model = std::make_shared<Model<double>>(Model<double>::build(cfg, s.next()));
  // Whole-network checks run in eval mode: with 1x1 late-stage maps a tiny
  // train-mode batch normalizes to exactly +-gamma, which parks residual sums
  // on the relu kink. Batch statistics are covered by the batchnorm2d check.
  for (int i = 0; i < 3; ++i) (void)model->forward(s.input({4, 3, 32, 32}), Mode::train);
  const TD x = s.input({2, 3, 32, 32});
  const std::uint64_t w = s.next();
  std::vector<TD> tensors{x};
  for (const auto& p : model->parameters()) tensors.push_back(p.tensor);
  const auto probes = random_probes(tensors, 48, s.next());
  std::vector<TD> probed;
  for (const auto& p : probes) probed.push_back(p.tensor);
  const auto loss = [=] { return project(model->forward(x, Mode::eval).logits, w); };
  s.check("model-" + to_string(v), kLayerTol, loss, {x}, 8);
  // Parameter coordinates drawn across the whole network, one probe each.
  s.check("model-" + to_string(v), kLayerTol, loss, probed, 1);
}

}  // namespace

std::vector<SweepResult> gradcheck_sweep(std::uint64_t seed) {
  Sweep s(seed);

  {
    const TD a = s.input({3, 4}), b = s.input({4, 5});
    const auto w = s.next();
    s.check("matmul", kLinearTol, [=] { return project(matmul(a, b), w); }, {a, b});
  }
  {
    const TD x = s.input({3, 6}), wt = s.input({6, 4}), b = s.input({4});
    const auto w = s.next();
    s.check("linear", kLinearTol, [=] { return project(linear(x, wt, b), w); }, {x, wt, b});
  }
  {
    const TD a = s.input({2, 3, 4}), b = s.input({3, 1});
    const auto w = s.next();
    s.check("elementwise", kLayerTol,
            [=] {
              const TD num = mul(add(a, b), sub(a, b));
              return project(div(num, affine_scalar(mul(b, b), 1.0, 2.0)), w);
            },
            {a, b});
  }
  {
    const TD a = s.input({2, 3, 4, 5});
    const auto w1 = s.next(), w2 = s.next(), w3 = s.next();
    s.check("reduce", kLayerTol,
            [=] {
              return add(add(project(reduce(a, {1, 3}, ReduceKind::sum, true), w1),
                             project(reduce(a, {0, 2}, ReduceKind::mean, false), w2)),
                         project(reduce(a, {1}, ReduceKind::max, true), w3));
            },
            {a});
  }
  {
    const TD a = s.input({3, 7});
    const auto w = s.next();
    s.check("activation", kLayerTol, [=] { return project(add(relu(a), sigmoid(a)), w); }, {a});
  }
  {
    const TD a = s.input({2, 2, 3, 3}), b = s.input({2, 1, 3, 3});
    const auto w = s.next();
    s.check("shape-ops", kLayerTol,
            [=] {
              const TD c = concat<double>({a, b}, 1);
              const TD p = pad(c, {{0, 0}, {0, 0}, {1, 0}, {0, 1}});
              const TD u = upsample_nearest(slice(p, 2, 1, 4), 2);
              return project(reshape(u, {2, 3 * 6 * 8}), w);
            },
            {a, b});
  }

  const std::vector<Conv2dSpec> convs{
      Conv2dSpec::square(3, 4, 3, 1, 1),
      Conv2dSpec::square(2, 3, 3, 2, 0, 1, 1, true),
      Conv2dSpec::square(2, 2, 3, 1, 2, 2),
      Conv2dSpec::square(4, 6, 3, 2, 1, 1, 2, true),
      Conv2dSpec::square(3, 2, 1),
      {3, 2, 1, 3, 1, 2, 0, 1, 1, 1, 1, false},
  };
  for (const auto& spec : convs) {
    const TD x = s.input({2, spec.in_channels, 6, 7});
    const TD wt = s.input(spec.weight_shape(), 0.5);
    const TD b = spec.bias ? s.input({spec.out_channels}) : TD();
    const auto w = s.next();
    std::vector<TD> ts{x, wt};
    if (spec.bias) ts.push_back(b);
    s.check("conv2d", kLayerTol, [=] { return project(conv2d(x, wt, b, spec), w); }, ts);
  }
  {
    const auto spec = Conv2dSpec::square(3, 3, 3, 1, 2, 2, 3);
    const TD x = s.input({2, 3, 6, 6}), wt = s.input(spec.weight_shape(), 0.5);
    const auto w = s.next();
    s.check("conv2d-depthwise", kLayerTol, [=] { return project(conv2d(x, wt, TD(), spec), w); },
            {x, wt});
  }
  {
    Rng rng(s.next());
    const auto layer = DepthwiseSeparableConv<double>::make(4, 5, 3, 2, 1, rng);
    const TD x = s.input({2, 4, 7, 7});
    const auto w = s.next();
    s.check("depthwise-separable", kLayerTol, [=] { return project(layer(x), w); },
            {x, layer.depthwise.weight, layer.pointwise.weight});
  }
  {
    BatchNorm2d<double> bn(3);
    bn.state.gamma = s.input({3});
    bn.state.beta = s.input({3});
    bn.state.running_mean = s.input({3}, 0.2);
    bn.state.running_var = add(s.input({3}, 0.1), TD::full({3}, 1.0));
    const TD x = s.input({3, 3, 4, 4});
    const auto w = s.next();
    s.check("batchnorm2d", kLayerTol, [=] { return project(bn(x, Mode::train), w); },
            {x, bn.state.gamma, bn.state.beta});
    s.check("batchnorm2d", kLayerTol, [=] { return project(bn(x, Mode::eval), w); },
            {x, bn.state.gamma, bn.state.beta});
  }
  {
    const TD x = s.input({2, 2, 7, 7});
    const auto w = s.next();
    s.check("maxpool2d", kLayerTol, [=] { return project(maxpool2d(x, 3, 2, 1), w); }, {x});
    s.check("global-pool", kLayerTol,
            [=] {
              return add(project(global_pool(x, PoolKind::avg), w),
                         project(global_pool(x, PoolKind::max), w + 1));
            },
            {x});
  }
  {
    const TD logits = s.input({4, 5}, 2.0);
    const std::vector<std::size_t> targets{0, 3, 4, 1};
    s.check("cross-entropy", kLayerTol, [=] { return cross_entropy(logits, targets); }, {logits});
  }
  {
    Rng rng(s.next());
    const ChannelAttention<double> ca(ChannelAttentionSpec{8, 4}, rng);
    const TD x = s.input({2, 8, 3, 4});
    const auto w = s.next();
    s.check("channel-attention", kLayerTol, [=] { return project(mul(x, ca.gate(x)), w); },
            {x, ca.reduce_weight, ca.expand_weight});
  }
  for (auto variant : {SpatialVariant::standard, SpatialVariant::improved}) {
    Rng rng(s.next());
    const SpatialAttention<double> sa(variant == SpatialVariant::standard
                                          ? SpatialAttentionSpec::standard()
                                          : SpatialAttentionSpec::improved(),
                                      rng);
    const TD x = s.input({2, 4, 9, 9});
    const auto w = s.next();
    std::vector<TD> ts{x};
    TensorList<double> params;
    sa.collect("sa", params);
    for (const auto& p : params) ts.push_back(p.tensor);
    s.check(variant == SpatialVariant::standard ? "spatial-attention" : "spatial-attention-improved",
            kLayerTol, [=] { return project(mul(x, sa.gate(x)), w); }, ts);
  }
  for (auto variant : {SpatialVariant::standard, SpatialVariant::improved}) {
    Rng rng(s.next());
    AttentionConfig cfg;
    cfg.reduction = 4;
    cfg.spatial = variant == SpatialVariant::standard ? SpatialAttentionSpec::standard()
                                                      : SpatialAttentionSpec::improved();
    const Cbam<double> block(8, cfg, rng);
    const TD x = s.input({2, 8, 8, 8});
    const auto w = s.next();
    std::vector<TD> ts{x};
    TensorList<double> params;
    block.collect("cbam", params);
    for (const auto& p : params) ts.push_back(p.tensor);
    s.check(variant == SpatialVariant::standard ? "cbam" : "cbam-improved", kLayerTol,
            [=] { return project(block(x).features, w); }, ts, 16);
  }
  {
    Rng rng(s.next());
    const MultiscaleFusion<double> fusion({8, 16, 32}, 8, rng);
    const TD s3 = s.input({2, 8, 8, 8}), s4 = s.input({2, 16, 4, 4}), s5 = s.input({2, 32, 2, 2});
    const auto w = s.next();
    std::vector<TD> ts{s3, s4, s5};
    TensorList<double> params;
    fusion.collect("fusion", params);
    for (const auto& p : params) ts.push_back(p.tensor);
    s.check("multiscale-fusion", kLayerTol, [=] { return project(fusion(s3, s4, s5), w); }, ts, 12);
  }
  for (auto v : {Variant::baseline, Variant::cbam, Variant::enhanced}) check_model(s, v);
  return s.results();
}

}  // namespace cbamnet
