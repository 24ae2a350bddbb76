#include "cbamnet/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cbamnet/heatmap.hpp"
#include "cbamnet/sweep.hpp"

namespace cbamnet {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Refuses to reuse a non-empty directory unless forced; forced reuse empties it.
void claim_directory(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError(dir.string() + " is not empty (use --force to overwrite)");
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

void write_metadata(const fs::path& dir, const std::vector<std::string>& args) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[64];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::string cmd;
  for (const auto& a : args) cmd += (cmd.empty() ? "" : " ") + a;
  write_text(dir / "metadata.txt", std::string("created=") + stamp + "\ncommand=" + cmd + "\n");
}

Normalization config_norm(const RunConfig& cfg) {
  Normalization n;
  const auto mean = cfg.get_list("norm_mean"), sd = cfg.get_list("norm_std");
  for (std::size_t c = 0; c < 3; ++c) {
    n.mean[c] = std::stod(mean[c]);
    n.std[c] = std::stod(sd[c]);
  }
  try {
    n.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return n;
}

std::uint64_t split_seed(const RunConfig& cfg) {
  return cfg.has("split_seed") ? cfg.get_u64("split_seed") : cfg.get_u64("seed");
}

std::size_t eval_batch(const RunConfig& cfg) {
  const std::size_t b = cfg.get_size("eval_batch_size");
  return b > 0 ? b : cfg.get_size("batch_size");
}

std::string split_listing(const PreparedData& d) {
  std::string out;
  auto add = [&](const Dataset& ds, const char* tag) {
    for (const auto& s : ds.samples) out += s.path + "\t" + ds.classes[s.label] + "\t" + tag + "\n";
  };
  add(d.fit, "fit");
  add(d.val, "val");
  add(d.test, "test");
  return out;
}

// Config values that must be consistent before any file is written.
void check_config(const RunConfig& cfg) {
  if (!cfg.has("data")) throw ConfigError("data=<corpus dir> is required");
  if (!fs::is_directory(cfg.get("data"))) throw ConfigError("data directory " + cfg.get("data") + " not found");
  if (cfg.has("norm_mean") != cfg.has("norm_std")) {
    throw ConfigError("norm_mean and norm_std must be given together");
  }
  if (cfg.has("norm_mean")) (void)config_norm(cfg);
  if (cfg.get_size("batch_size") == 0) throw ConfigError("batch_size must be >= 1");
  (void)model_config(cfg, parse_variant(cfg.get("variant")), 2);
  for (Variant v : compare_variants(cfg)) (void)model_config(cfg, v, 2);
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg, std::size_t height, std::size_t width) {
  if (!cfg.has("data")) throw ConfigError("data=<corpus dir> is required");
  PreparedData d;
  d.full = scan_directory(cfg.get("data"), cfg.get_bool("lenient"), &d.cleaning);
  if (cfg.get_bool("exclude_small_classes")) {
    d.full = exclude_small_classes(d.full, cfg.get_double("train_ratio"),
                                   cfg.get_size("exclusion_threshold"));
  }
  const std::uint64_t seed = split_seed(cfg);
  SplitResult tt = split_dataset(d.full, cfg.get_double("train_ratio"), seed);
  SplitResult fv = validation_split(tt.first, cfg.get_double("val_fraction"), seed);
  d.train = std::move(tt.first);
  d.test = std::move(tt.second);
  d.fit = std::move(fv.first);
  d.val = std::move(fv.second);
  d.norm = cfg.has("norm_mean") ? config_norm(cfg) : channel_stats(d.fit, height, width);
  return d;
}

void emit_report(const MetricsReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "report.txt", report.table());
  write_text(dir / "confusion.csv", report.confusion_csv());
  write_text(dir / "metrics.json", report.to_json());
}

std::string compare_table(const std::vector<RunOutcome>& runs) {
  std::string out = "variant\ttest_accuracy\tmacro_f1\n";
  char buf[128];
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\n", to_string(r.variant).c_str(), r.report.accuracy,
                  r.report.macro.f1);
    out += buf;
  }
  return out;
}

RunOutcome run_training(const RunConfig& cfg, Variant variant, const PreparedData& data,
                        const fs::path& run_dir, const std::optional<fs::path>& resume) {
  RunConfig echo = cfg;
  echo.set("variant", to_string(variant));
  const ModelConfig mc = model_config(cfg, variant, data.full.classes.size());
  const TrainOptions opts = train_options(cfg, mc);
  AdamOptions adam{cfg.get_double("beta1"), cfg.get_double("beta2"), cfg.get_double("adam_eps")};

  fs::create_directories(run_dir);
  write_text(run_dir / "config.resolved", echo.resolved());
  write_text(run_dir / "split.tsv", split_listing(data));
  if (!data.cleaning.skipped.empty()) write_text(run_dir / "cleaning.txt", data.cleaning.to_text());

  auto state = TrainState<float>::create(mc, cfg.get_u64("seed"), adam);
  write_text(run_dir / "model.txt", mc.canonical() + "\n" + state.model.layer_dump().to_text() + "total " +
                                        std::to_string(state.model.param_count()) + "\n");
  state.norm = data.norm;
  state.classes = data.full.classes;
  if (resume) checkpoint_load_into(state, *resume);

  RunOutcome out;
  out.variant = variant;
  const std::string tag = to_string(variant);
  out.log = fit(state, data.fit, data.val, opts, run_dir, [&](const EpochStats& e) {
    std::printf("[%s] %s\n", tag.c_str(), e.to_line().c_str());
    std::fflush(stdout);
  });

  const fs::path marker = run_dir / "checkpoints" / "best.txt";
  BatchOptions eval_opts = opts.batch;
  EvalResult ev;
  if (fs::exists(marker)) {
    std::ifstream in(marker);
    std::string name;
    std::getline(in, name);
    out.best_checkpoint = run_dir / "checkpoints" / name;
    const auto best = checkpoint_load<float>(out.best_checkpoint);
    eval_opts.norm = best.norm;
    ev = evaluate(best.model, data.test, eval_batch(cfg), eval_opts);
  } else {
    eval_opts.norm = state.norm;
    ev = evaluate(state.model, data.test, eval_batch(cfg), eval_opts);
  }
  out.report = ev.report;
  emit_report(out.report, run_dir);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!file.empty()) cfg.load(file);
    for (const auto& s : sets) cfg.set_assignment(s);
    return cfg;
  }
};

std::string keys_help() {
  std::string out = "Config keys (key=value, '#' comments):\n";
  for (const auto& k : RunConfig::keys()) {
    out += "  " + k.name + " [" + (k.fallback.empty() ? "unset" : k.fallback) + "]  " + k.help + "\n";
  }
  return out;
}

int cmd_gen_synth(const SynthSpec& spec, const fs::path& out, bool force,
                  const std::vector<std::string>& args) {
  if (spec.size < 32) throw ConfigError("--size must be >= 32");
  if (spec.classes < 1 || spec.classes > 4) throw ConfigError("--classes must be in 1..4");
  claim_directory(out, force);
  const Dataset ds = generate_synthetic(spec, out);
  write_metadata(out, args);
  std::printf("wrote %zu images in %zu classes to %s\n", ds.size(), ds.classes.size(), out.string().c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& out, bool force, const std::string& resume,
              const std::vector<std::string>& args) {
  check_config(cfg);
  if (!resume.empty() && !fs::exists(resume)) throw ConfigError("no checkpoint at " + resume);
  const Variant v = parse_variant(cfg.get("variant"));
  const ModelConfig probe = model_config(cfg, v, 2);
  // A resumed run continues in place: earlier checkpoints and epochs.tsv rows stay.
  if (resume.empty()) {
    claim_directory(out, force);
  } else {
    fs::create_directories(out);
  }
  write_metadata(out, args);
  const PreparedData data = prepare_data(cfg, probe.input_h, probe.input_w);
  const RunOutcome r = run_training(cfg, v, data, out,
                                    resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
  std::printf("%s", r.report.table().c_str());
  return 0;
}

int cmd_compare(const RunConfig& cfg, const fs::path& out, bool force,
                const std::vector<std::string>& args) {
  check_config(cfg);
  const auto variants = compare_variants(cfg);
  const ModelConfig probe = model_config(cfg, variants.front(), 2);
  claim_directory(out, force);
  write_metadata(out, args);
  write_text(out / "config.resolved", cfg.resolved());
  // One shared split and normalization for every variant.
  const PreparedData data = prepare_data(cfg, probe.input_h, probe.input_w);
  std::vector<RunOutcome> runs;
  for (Variant v : variants) runs.push_back(run_training(cfg, v, data, out / to_string(v)));
  const std::string table = compare_table(runs);
  write_text(out / "compare.tsv", table);
  std::printf("%s", table.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const std::string& split,
             const fs::path& out, bool force, const std::vector<std::string>& args) {
  if (!cfg.has("data")) throw ConfigError("data=<corpus dir> is required");
  if (split != "test" && split != "all") throw ConfigError("--split must be test or all");
  if (!fs::exists(checkpoint)) throw ConfigError("no checkpoint at " + checkpoint.string());
  claim_directory(out, force);
  write_metadata(out, args);
  write_text(out / "config.resolved", cfg.resolved());
  const auto state = checkpoint_load<float>(checkpoint);
  const ModelConfig& mc = state.model.config();
  const PreparedData data = prepare_data(cfg, mc.input_h, mc.input_w);
  if (data.full.classes != state.classes) {
    throw std::runtime_error("corpus classes differ from the checkpoint's classes");
  }
  BatchOptions opts;
  opts.height = mc.input_h;
  opts.width = mc.input_w;
  opts.norm = state.norm;
  opts.workers = std::max<std::size_t>(1, cfg.get_size("workers"));
  const EvalResult ev = evaluate(state.model, split == "all" ? data.full : data.test, eval_batch(cfg), opts);
  emit_report(ev.report, out);
  std::printf("%s", ev.report.table().c_str());
  return 0;
}

struct HeatmapArgs {
  std::string checkpoint;
  std::string image;
  std::string images;
  std::string method = "spatial-gate";
  std::string stage;
  int target = -1;
  std::string out;
  bool force = false;
};

Image heatmap_for(const TrainState<float>& state, const Tensor<float>& x, HeatmapMethod method,
                  const HeatmapArgs& a) {
  if (method == HeatmapMethod::spatial_gate) {
    return spatial_gate_map(state.model, x, a.stage.empty() ? 0 : std::stoi(a.stage));
  }
  std::optional<std::size_t> cls;
  if (a.target >= 0) cls = static_cast<std::size_t>(a.target);
  return gradcam_map(state.model, x, a.stage.empty() ? "stage5" : a.stage, cls);
}

int cmd_heatmap(const HeatmapArgs& a, const std::vector<std::string>& args) {
  const HeatmapMethod method = [&] {
    try {
      return parse_heatmap_method(a.method);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }();
  if (a.image.empty() == a.images.empty()) throw ConfigError("give exactly one of --image or --images");
  if (!fs::exists(a.checkpoint)) throw ConfigError("no checkpoint at " + a.checkpoint);
  if (method == HeatmapMethod::spatial_gate && !a.stage.empty() &&
      a.stage.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("spatial-gate --stage takes a stage number (2..5)");
  }
  const auto state = checkpoint_load<float>(a.checkpoint);
  if (method == HeatmapMethod::spatial_gate && state.model.config().variant == Variant::baseline) {
    throw ConfigError("spatial-gate heatmaps need an attention variant; use --method gradcam");
  }
  BatchOptions opts;
  opts.height = state.model.config().input_h;
  opts.width = state.model.config().input_w;
  opts.norm = state.norm;

  auto render = [&](const fs::path& src, const fs::path& dst) {
    const Image img = read_ppm(src);
    const Tensor<float> x = image_to_input<float>(img, opts);
    const Image map = heatmap_for(state, x, method, a);
    overlay_emit(resize_bilinear(img, opts.height, opts.width), map, dst);
  };

  if (!a.image.empty()) {
    const fs::path dst = a.out;
    if (fs::exists(dst) && !a.force) throw ConfigError(dst.string() + " exists (use --force to overwrite)");
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    render(a.image, dst);
    std::printf("wrote %s\n", dst.string().c_str());
    return 0;
  }
  claim_directory(a.out, a.force);
  write_metadata(a.out, args);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.images)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    render(f, fs::path(a.out) / (f.stem().string() + "." + to_string(method) + ".ppm"));
  }
  std::printf("wrote %zu overlays to %s\n", files.size(), a.out.c_str());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  std::printf("%-28s %12s %10s %7s\n", "kind", "max_rel_err", "tolerance", "result");
  for (const auto& r : gradcheck_sweep(seed)) {
    std::printf("%-28s %12.3e %10.0e %7s\n", r.kind.c_str(), r.max_rel_err, r.tolerance,
                r.pass() ? "ok" : "FAIL");
    ok = ok && r.pass();
  }
  return ok ? 0 : 1;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"Ship classification with ResNet, CBAM and the enhanced attention network.", "cbamnet"};
  app.require_subcommand(1);
  app.footer(keys_help());

  auto* gen = app.add_subcommand("gen-synth", "render the synthetic four-class ship corpus");
  SynthSpec synth;
  std::string gen_out;
  bool gen_force = false;
  gen->add_option("--classes", synth.classes, "number of ship families (1..4)")->capture_default_str();
  gen->add_option("--per-class", synth.per_class, "images per class")->capture_default_str();
  gen->add_option("--size", synth.size, "image extent in pixels (>= 32)")->capture_default_str();
  gen->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_flag("--force", gen_force, "empty a non-empty output directory first");

  auto* train = app.add_subcommand("train", "train one variant; writes config echo, epochs.tsv, checkpoints, report");
  ConfigFlags train_cfg;
  train_cfg.attach(train);
  std::string train_out, resume;
  bool train_force = false;
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--resume", resume, "continue from a checkpoint of the same configuration");
  train->add_flag("--force", train_force, "empty a non-empty run directory first");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split of a corpus");
  ConfigFlags eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_ckpt, eval_out, eval_split = "test";
  bool eval_force = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "test or all")->capture_default_str();
  eval->add_option("--out", eval_out, "report directory")->required();
  eval->add_flag("--force", eval_force, "empty a non-empty report directory first");

  auto* compare = app.add_subcommand("compare", "train every listed variant under one seed and split");
  ConfigFlags cmp_cfg;
  cmp_cfg.attach(compare);
  std::string cmp_out;
  bool cmp_force = false;
  compare->add_option("--out", cmp_out, "output directory (one run directory per variant)")->required();
  compare->add_flag("--force", cmp_force, "empty a non-empty output directory first");

  auto* heat = app.add_subcommand("heatmap", "overlay attention or Grad-CAM heatmaps on images");
  HeatmapArgs ha;
  heat->add_option("--checkpoint", ha.checkpoint, "checkpoint file")->required();
  heat->add_option("--image", ha.image, "one P6 image");
  heat->add_option("--images", ha.images, "directory of P6 images (batch mode)");
  heat->add_option("--method", ha.method, "spatial-gate or gradcam")->capture_default_str();
  heat->add_option("--stage", ha.stage,
                   "spatial-gate: stage number (default last attention block); gradcam: stem, stage2..5 or fused");
  heat->add_option("--class", ha.target, "gradcam target class (default predicted)");
  heat->add_option("--out", ha.out, "output .ppm (single) or directory (batch)")->required();
  heat->add_flag("--force", ha.force, "overwrite existing output");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference sweep over every layer kind");
  std::uint64_t grad_seed = 7;
  grad->add_option("--seed", grad_seed, "input seed")->capture_default_str();

  std::vector<std::string> rev;
  if (!args.empty()) rev.assign(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(synth, gen_out, gen_force, args);
    if (train->parsed()) return cmd_train(train_cfg.resolve(), train_out, train_force, resume, args);
    if (eval->parsed()) {
      // Without --config, reuse the run's own config echo so the split matches training.
      const fs::path echo = fs::path(eval_ckpt).parent_path().parent_path() / "config.resolved";
      if (eval_cfg.file.empty() && fs::exists(echo)) eval_cfg.file = echo.string();
      return cmd_eval(eval_cfg.resolve(), eval_ckpt, eval_split, eval_out, eval_force, args);
    }
    if (compare->parsed()) return cmd_compare(cmp_cfg.resolve(), cmp_out, cmp_force, args);
    if (heat->parsed()) return cmd_heatmap(ha, args);
    if (grad->parsed()) return cmd_gradcheck(grad_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.empty()) args.push_back("cbamnet");
  return cli_main(args);
}

}  // namespace cbamnet
