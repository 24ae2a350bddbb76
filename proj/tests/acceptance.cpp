// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Optional arguments select
// criteria by number; --work DIR keeps the artifacts.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cbamnet/cli.hpp"
#include "cbamnet/heatmap.hpp"
#include "cbamnet/sweep.hpp"
#include "oracles.hpp"

using namespace cbamnet;
namespace fs = std::filesystem;

namespace {

using TF = Tensor<float>;
using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the command-line tool with its stdout sent to `log`.
int tool(const std::vector<std::string>& args, const fs::path& log) {
  std::vector<std::string> argv{"cbamnet"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::fflush(stdout);
  const int saved = dup(STDOUT_FILENO);
  const int fd = open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  dup2(fd, STDOUT_FILENO);
  close(fd);
  const int rc = cli_main(argv);
  std::fflush(stdout);
  dup2(saved, STDOUT_FILENO);
  close(saved);
  return rc;
}

std::map<std::string, double> compare_accuracy(const fs::path& tsv) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(tsv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string v;
    double acc = 0.0;
    f >> v >> acc;
    out[v] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  const auto results = gradcheck_sweep();
  const double elapsed = seconds_since(t0);
  Verdict v{elapsed < 120.0, ""};
  double worst = 0.0;
  for (const auto& r : results) {
    const bool exact_kind = r.kind == "linear" || r.kind == "matmul";
    const double limit = exact_kind ? 1e-6 : 1e-4;
    if (!(r.max_rel_err < limit)) {
      v.pass = false;
      v.detail += r.kind + " " + fmt("%.3g", r.max_rel_err) + "; ";
    }
    worst = std::max(worst, r.max_rel_err);
  }
  v.detail += std::to_string(results.size()) + " kinds, worst " + fmt("%.3g", worst) + ", " +
              fmt("%.1f s", elapsed);
  return v;
}

Verdict kernels() {
  Rng rng(2024);
  double conv_worst = 0.0;
  std::size_t depthwise = 0, dilated = 0, strided = 0;
  const int configs = 240;
  for (int i = 0; i < configs; ++i) {
    const auto c = oracle::random_conv_case(rng);
    const TF x = TF::random(c.input, RandomFill{Distribution::uniform, 1.0, rng.next_u64()});
    const TF w = TF::random(c.spec.weight_shape(), RandomFill{Distribution::uniform, 0.5, rng.next_u64()});
    const TF b = c.spec.bias ? TF::random({c.spec.out_channels}, RandomFill{Distribution::uniform, 0.5, rng.next_u64()})
                             : TF();
    const TF y = conv2d(x, w, b, c.spec);
    const auto ref = oracle::conv2d(x, w, b, c.spec);
    conv_worst = y.shape() == ref.shape ? std::max(conv_worst, oracle::max_abs_diff(y, ref)) : 1e9;
    depthwise += c.spec.groups > 1;
    dilated += c.spec.dilation_h > 1 || c.spec.dilation_w > 1;
    strided += c.spec.stride_h > 1 || c.spec.stride_w > 1;
  }

  double pool_worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t k = 1 + rng.below(4), s = 1 + rng.below(3), p = rng.below((k + 1) / 2);
    const std::size_t h = k + rng.below(9), wd = k + rng.below(9);
    const TD x = TD::random({1 + rng.below(2), 1 + rng.below(4), h, wd}, RandomFill{Distribution::normal, 1.0, rng.next_u64()});
    const TD y = maxpool2d(x, k, s, p);
    const auto ref = oracle::maxpool2d(x, k, s, p);
    pool_worst = y.shape() == ref.shape ? std::max(pool_worst, oracle::max_abs_diff(y, ref)) : 1e9;
  }

  double attn_worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t reduction = 2 + rng.below(3);
    const std::size_t c = reduction * (1 + rng.below(4));
    const TD x = TD::random({1 + rng.below(2), c, 3 + rng.below(8), 3 + rng.below(8)},
                            RandomFill{Distribution::normal, 1.0, rng.next_u64()});
    for (auto variant : {SpatialVariant::standard, SpatialVariant::improved}) {
      AttentionConfig cfg;
      cfg.reduction = reduction;
      cfg.spatial = variant == SpatialVariant::standard ? SpatialAttentionSpec::standard()
                                                         : SpatialAttentionSpec::improved();
      Rng init(rng.next_u64());
      const Cbam<double> block(c, cfg, init);
      const auto g = oracle::grid(x);
      const TD cg = block.channel.gate(x);
      const auto cref = oracle::channel_gate(g, block.channel);
      for (std::size_t j = 0; j < cref.size(); ++j) attn_worst = std::max(attn_worst, std::abs(cg.data()[j] - cref[j]));
      attn_worst = std::max(attn_worst, oracle::max_abs_diff(block.spatial.gate(x), oracle::spatial_gate(g, block.spatial)));
      attn_worst = std::max(attn_worst, oracle::max_abs_diff(block(x).features, oracle::cbam(x, block)));
    }
  }
  Verdict v;
  v.pass = conv_worst < 1e-5 && pool_worst < 1e-6 && attn_worst < 1e-6 && depthwise > 0 && dilated > 0 && strided > 0;
  v.detail = "conv " + std::to_string(configs) + " configs (" + std::to_string(depthwise) + " grouped) max " +
             fmt("%.2g", conv_worst) + ", maxpool " + fmt("%.2g", pool_worst) + ", attention " + fmt("%.2g", attn_worst);
  return v;
}

Verdict metrics_tables() {
  auto two = [](double x) { return fmt("%.2f", round_half_up(x)); };
  struct Case {
    std::vector<double> p, r;
    std::vector<std::size_t> n;
    std::vector<std::string> expect;  // acc, macro p/r/f1, weighted p/r/f1
  };
  const std::vector<Case> cases{
      {{0.83, 0.93, 0.85, 0.88}, {0.81, 0.90, 0.76, 0.94}, {411, 308, 258, 691},
       {"0.87", "0.87", "0.85", "0.86", "0.87", "0.87", "0.87"}},
      {{0.94, 0.94, 0.91, 0.98}, {0.95, 0.93, 0.90, 0.98}, {405, 330, 254, 679},
       {"0.95", "0.94", "0.94", "0.94", "0.95", "0.95", "0.95"}},
  };
  Verdict v{true, ""};
  for (std::size_t t = 0; t < cases.size(); ++t) {
    const auto& c = cases[t];
    std::vector<ClassMetrics> rows;
    for (std::size_t i = 0; i < 4; ++i) rows.push_back({c.p[i], c.r[i], 0.0, c.n[i]});
    const auto m = MetricsReport::from_rows(rows, {"Bulk Carrier", "Cargo", "Container", "Oil Tanker"});
    const std::vector<std::string> got{two(m.accuracy),          two(m.macro.precision), two(m.macro.recall),
                                       two(m.macro.f1),          two(m.weighted.precision),
                                       two(m.weighted.recall),   two(m.weighted.f1)};
    std::string joined;
    for (const auto& s : got) joined += (joined.empty() ? "" : "/") + s;
    v.detail += "table " + std::to_string(t + 1) + " " + joined + (t + 1 < cases.size() ? ", " : "");
    v.pass = v.pass && got == c.expect;
  }
  return v;
}

Verdict bypass() {
  Verdict v{true, ""};
  std::size_t compared = 0;
  for (auto variant : {Variant::cbam, Variant::enhanced}) {
    auto cfg = ModelConfig::tiny(variant);
    cfg.enhanced.multiscale_fusion = false;
    auto attn = Model<float>::build(cfg, 101);
    auto skel = Model<float>::build(cfg.skeleton(), 202);
    if (skel.copy_matching_from(attn) != skel.parameters().size() + skel.buffers().size()) v.pass = false;
    attn.set_attention_bypass(true);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const TF x = TF::random({2, 3, 64, 64}, RandomFill{Distribution::normal, 1.0, seed + 50});
      for (Mode mode : {Mode::eval, Mode::train}) {
        const TF a = attn.forward(x, mode).logits, b = skel.forward(x, mode).logits;
        v.pass = v.pass && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
        ++compared;
      }
    }
  }
  v.detail = std::to_string(compared) + " forward passes compared bitwise";
  return v;
}

// Shared by criteria 5 and 8.
fs::path g_desk_run;

Verdict desk_scale() {
  const fs::path corpus = g_work / "desk-corpus", out = g_work / "desk";
  const fs::path log = g_work / "desk.log";
  const auto t0 = Clock::now();
  if (tool({"gen-synth", "--classes", "4", "--per-class", "250", "--size", "64", "--seed", "42", "--out",
            corpus.string(), "--force"}, log) != 0) {
    return {false, "corpus generation failed"};
  }
  const int rc = tool({"compare", "--set", "data=" + corpus.string(), "--set", "preset=tiny", "--set", "seed=42",
                       "--set", "epochs=15", "--set", "batch_size=32", "--set", "workers=1", "--out",
                       out.string(), "--force"},
                      log);
  const double elapsed = seconds_since(t0);
  if (rc != 0) return {false, "compare exited " + std::to_string(rc)};
  g_desk_run = out;
  auto acc = compare_accuracy(out / "compare.tsv");
  const double e = acc["enhanced"], c = acc["cbam"], b = acc["baseline"];
  Verdict v;
  v.pass = e >= 0.90 && e >= c - 0.02 && c >= b - 0.02 && elapsed <= 900.0;
  v.detail = "enhanced " + fmt("%.3f", e) + ", cbam " + fmt("%.3f", c) + ", baseline " + fmt("%.3f", b) + ", " +
             fmt("%.0f s", elapsed);
  return v;
}

Verdict determinism() {
  const fs::path corpus = g_work / "det-corpus";
  const fs::path log = g_work / "det.log";
  if (tool({"gen-synth", "--per-class", "40", "--size", "64", "--seed", "3", "--out", corpus.string(), "--force"},
           log) != 0) {
    return {false, "corpus generation failed"};
  }
  std::vector<fs::path> runs{g_work / "det-a", g_work / "det-b"};
  for (const auto& r : runs) {
    if (tool({"compare", "--set", "data=" + corpus.string(), "--set", "epochs=3", "--set", "batch_size=16",
              "--set", "workers=1", "--out", r.string(), "--force"},
             log) != 0) {
      return {false, "compare failed"};
    }
  }
  Verdict v{true, ""};
  std::size_t files = 0;
  for (const char* variant : {"baseline", "cbam", "enhanced"}) {
    for (const char* f : {"epochs.tsv", "metrics.json", "confusion.csv", "report.txt"}) {
      const bool same = slurp(runs[0] / variant / f) == slurp(runs[1] / variant / f);
      if (!same) v.detail += std::string(variant) + "/" + f + " differs; ";
      v.pass = v.pass && same;
      ++files;
    }
  }
  v.pass = v.pass && slurp(runs[0] / "compare.tsv") == slurp(runs[1] / "compare.tsv");
  v.detail += std::to_string(files) + " per-variant files and compare.tsv compared";
  return v;
}

Verdict resume() {
  const fs::path corpus = g_work / "det-corpus";
  const fs::path log = g_work / "resume.log";
  if (!fs::exists(corpus) &&
      tool({"gen-synth", "--per-class", "40", "--size", "64", "--seed", "3", "--out", corpus.string()}, log) != 0) {
    return {false, "corpus generation failed"};
  }
  const std::vector<std::string> common{"--set", "data=" + corpus.string(), "--set", "variant=cbam", "--set",
                                        "batch_size=16", "--set", "workers=1", "--force"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.begin() + 1, common.begin(), common.end());
    return a;
  };
  const fs::path full = g_work / "resume-full", part = g_work / "resume-part";
  if (tool(with({"train", "--set", "epochs=5", "--out", full.string()}), log) != 0) return {false, "full run failed"};
  if (tool(with({"train", "--set", "epochs=2", "--out", part.string()}), log) != 0) return {false, "first leg failed"};
  if (tool(with({"train", "--set", "epochs=5", "--out", part.string(), "--resume",
                 (part / "checkpoints" / "epoch_002.cbck").string()}),
           log) != 0) {
    return {false, "resumed leg failed"};
  }
  Verdict v{true, ""};
  for (const char* f : {"epochs.tsv", "metrics.json", "checkpoints/epoch_005.cbck", "checkpoints/best.txt"}) {
    const bool same = slurp(full / f) == slurp(part / f);
    if (!same) v.detail += std::string(f) + " differs; ";
    v.pass = v.pass && same;
  }
  v.detail += "resumed at epoch 2 of 5";
  return v;
}

Verdict heatmaps() {
  if (g_desk_run.empty()) return {false, "needs the criterion 5 run"};
  const fs::path sample = g_work / "heat-sample", out = g_work / "heat-out";
  const fs::path log = g_work / "heat.log";
  if (tool({"gen-synth", "--per-class", "5", "--size", "64", "--seed", "2025", "--out", sample.string(), "--force"},
           log) != 0) {
    return {false, "sample generation failed"};
  }
  const fs::path ckpt_dir = g_desk_run / "cbam" / "checkpoints";
  std::string best = slurp(ckpt_dir / "best.txt");
  while (!best.empty() && (best.back() == '\n' || best.back() == '\r')) best.pop_back();
  const fs::path ckpt = ckpt_dir / best;

  std::vector<fs::path> images;
  for (const auto& cls : synthetic_class_names())
    for (const auto& e : fs::directory_iterator(sample / cls)) images.push_back(e.path());
  std::sort(images.begin(), images.end());

  // The tool writes valid P6 overlays.
  std::size_t valid = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path dst = out / ("overlay_" + std::to_string(i) + ".ppm");
    fs::create_directories(out);
    if (tool({"heatmap", "--checkpoint", ckpt.string(), "--image", images[i].string(), "--out", dst.string(),
              "--force"},
             log) != 0) {
      continue;
    }
    try {
      const std::string bytes = slurp(dst);
      const Image img = decode_ppm(bytes);
      valid += bytes.rfind("P6", 0) == 0 && img.height == 64 && img.width == 64;
    } catch (const std::exception&) {
    }
  }

  // Gate maps of the trained model and of the same model with zeroed attention.
  const auto state = checkpoint_load<float>(ckpt);
  BatchOptions opts;
  opts.height = state.model.config().input_h;
  opts.width = state.model.config().input_w;
  opts.norm = state.norm;
  std::size_t varied = 0;
  std::vector<TF> inputs;
  for (const auto& p : images) {
    TF x = image_to_input<float>(read_ppm(p), opts);
    x = reshape(x, {1, 3, opts.height, opts.width});
    const Image map = spatial_gate_map(state.model, x);
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    varied += *hi - *lo > 0.1f;
    inputs.push_back(x);
  }
  auto zeroed = checkpoint_load<float>(ckpt);
  for (const auto& p : zeroed.model.parameters()) {
    if (p.name.find(".attention.") == std::string::npos) continue;
    auto t = p.tensor;
    std::fill(t.data().begin(), t.data().end(), 0.0f);
  }
  std::size_t uniform = 0;
  for (const auto& x : inputs) {
    const Image map = spatial_gate_map(zeroed.model, x);
    uniform += std::all_of(map.values.begin(), map.values.end(), [](float v) { return v == 0.5f; });
  }
  const std::size_t n = images.size();
  Verdict v;
  v.pass = n == 20 && valid == n && uniform == n && varied * 5 >= n * 4;
  v.detail = std::to_string(valid) + "/" + std::to_string(n) + " valid P6, " + std::to_string(uniform) +
             " uniform 0.5 when zeroed, " + std::to_string(varied) + "/" + std::to_string(n) +
             " trained maps with range > 0.1";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
      keep = true;
    } else {
      only.insert(std::stoi(a));
    }
  }
  if (g_work.empty()) g_work = fs::temp_directory_path() / ("cbamnet-acceptance-" + std::to_string(getpid()));
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients}, {"kernel oracles", kernels},   {"published metric tables", metrics_tables},
      {"bypass equivalence", bypass},      {"desk-scale comparison", desk_scale}, {"determinism", determinism},
      {"checkpoint resume", resume},       {"heatmap contract", heatmaps},
  };
  // Criterion 8 reuses the criterion 5 run.
  if (only.count(8)) only.insert(5);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %d %-22s %s  %s\n", id, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(g_work);
  return failed == 0 ? 0 : 1;
}
