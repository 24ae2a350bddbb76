#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cbamnet/cli.hpp"

namespace cbamnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 19) return false;
  out = std::stoull(s);
  return true;
}

bool parse_real(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
    return true;
  }
  return false;
}

// Empty values are allowed for every type whose fallback is empty.
bool valid(const std::string& type, const std::string& v) {
  std::uint64_t u = 0;
  double d = 0;
  bool b = false;
  if (type == "text") return true;
  if (type == "uint") return parse_u64(v, u);
  if (type == "real") return parse_real(v, d);
  if (type == "positive") return parse_real(v, d) && d > 0;
  if (type == "fraction") return parse_real(v, d) && d > 0 && d < 1;
  if (type == "bool") return parse_bool(v, b);
  if (type == "opt-bool") return v.empty() || parse_bool(v, b);
  if (type == "opt-uint") return v.empty() || parse_u64(v, u);
  if (type == "variant") return v == "baseline" || v == "cbam" || v == "enhanced";
  if (type == "preset") return v == "tiny" || v == "resnet50";
  if (type == "variants") {
    const auto parts = split_commas(v);
    return !parts.empty() && std::all_of(parts.begin(), parts.end(),
                                         [](const std::string& p) { return valid("variant", p); });
  }
  if (type == "stages") {
    if (v.empty() || v == "none") return true;
    for (const auto& p : split_commas(v)) {
      if (!parse_u64(p, u) || u < 2 || u > 5) return false;
    }
    return true;
  }
  if (type == "sizes") {
    if (v.empty()) return true;
    const auto parts = split_commas(v);
    return parts.size() == 4 && std::all_of(parts.begin(), parts.end(), [&](const std::string& p) {
             return parse_u64(p, u) && u > 0;
           });
  }
  if (type == "triple") {
    if (v.empty()) return true;
    const auto parts = split_commas(v);
    return parts.size() == 3 &&
           std::all_of(parts.begin(), parts.end(), [&](const std::string& p) { return parse_real(p, d); });
  }
  return false;
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k{
      {"variant", "variant", "enhanced", "architecture for train: baseline, cbam or enhanced"},
      {"variants", "variants", "baseline,cbam,enhanced", "architectures run by compare"},
      {"preset", "preset", "tiny", "tiny (desk scale, 64x64) or resnet50 (224x224)"},
      {"data", "text", "", "corpus root laid out as <class>/*.ppm"},
      {"lenient", "bool", "false", "skip unreadable images and list them in cleaning.txt"},
      {"seed", "uint", "42", "model initialization, shuffling and augmentation seed"},
      {"split_seed", "opt-uint", "", "seed of the train/test and validation splits (default: seed)"},
      {"train_ratio", "fraction", "0.8", "train share of each class"},
      {"val_fraction", "fraction", "0.2", "validation share of each training class"},
      {"exclude_small_classes", "bool", "false", "drop classes whose test share is <= threshold"},
      {"exclusion_threshold", "uint", "100", "test-count threshold of the exclusion rule"},
      {"input_size", "uint", "0", "square input extent; 0 keeps the preset's"},
      {"norm_mean", "triple", "", "per-channel mean r,g,b; empty = fit-set statistics"},
      {"norm_std", "triple", "", "per-channel std r,g,b; empty = fit-set statistics"},
      {"epochs", "uint", "30", "training epochs"},
      {"batch_size", "uint", "128", "mini-batch size"},
      {"drop_last", "bool", "false", "drop a short final training batch"},
      {"lr", "positive", "1e-4", "initial learning rate"},
      {"lr_factor", "positive", "0.1", "step-decay factor"},
      {"lr_step", "uint", "10", "epochs between decays"},
      {"beta1", "fraction", "0.9", "Adam first-moment decay"},
      {"beta2", "fraction", "0.999", "Adam second-moment decay"},
      {"adam_eps", "positive", "1e-8", "Adam denominator epsilon"},
      {"augment", "bool", "true", "augment training batches"},
      {"augment_hflip", "bool", "true", "random horizontal flips (p = 0.5)"},
      {"augment_vflip", "bool", "true", "random vertical flips (p = 0.5)"},
      {"augment_rotate", "bool", "true", "random rotations"},
      {"rotation_degrees", "real", "10", "rotation range +-degrees"},
      {"base_width", "uint", "0", "stage-2 bottleneck width; 0 keeps the preset's"},
      {"stage_blocks", "sizes", "", "blocks in stages 2..5, e.g. 3,4,6,3; empty keeps the preset's"},
      {"attention_stages", "stages", "", "stages with attention blocks, or none; empty = 2,3,4,5"},
      {"attention_reduction", "uint", "0", "channel-attention reduction ratio; 0 = 16"},
      {"attention_kernel", "uint", "0", "spatial-attention kernel; 0 = 7"},
      {"multiscale_fusion", "opt-bool", "", "enhanced: fuse stages 3-5 (default true)"},
      {"dwsep_stages", "stages", "", "enhanced: depthwise separable stages, or none (default 4,5)"},
      {"dilated_stage5", "opt-bool", "", "enhanced: dilated stride-free stage 5 (default true)"},
      {"fusion_width", "uint", "0", "fusion channel width; 0 keeps the preset's"},
      {"eval_batch_size", "uint", "0", "evaluation batch size; 0 = batch_size"},
      {"workers", "uint", "1", "preprocessing threads (results do not depend on it)"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.fallback;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& ks = keys();
  const auto it = std::find_if(ks.begin(), ks.end(), [&](const Key& k) { return k.name == key; });
  if (it == ks.end()) throw ConfigError("unknown config key '" + key + "'");
  const std::string v = trim(value);
  const bool empty_ok = it->fallback.empty();
  if (!(v.empty() && empty_ok) && !valid(it->type, v)) {
    throw ConfigError("invalid value '" + v + "' for " + key + " (" + it->type + ")");
  }
  values_[key] = v;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::parse(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  parse(buf.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t u = 0;
  if (!parse_u64(get(key), u)) throw ConfigError(key + " is not an unsigned integer");
  return u;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

double RunConfig::get_double(const std::string& key) const {
  double d = 0;
  if (!parse_real(get(key), d)) throw ConfigError(key + " is not a number");
  return d;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool b = false;
  if (!parse_bool(get(key), b)) throw ConfigError(key + " is not a boolean");
  return b;
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  return split_commas(get(key));
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

namespace {

std::set<int> stage_set(const RunConfig& cfg, const std::string& key) {
  std::set<int> out;
  if (cfg.get(key) == "none") return out;
  for (const auto& p : cfg.get_list(key)) out.insert(std::stoi(p));
  return out;
}

}  // namespace

ModelConfig model_config(const RunConfig& cfg, Variant variant, std::size_t num_classes) {
  ModelConfig c = cfg.get("preset") == "resnet50" ? ModelConfig::resnet50(variant) : ModelConfig::tiny(variant);
  c.num_classes = num_classes;
  if (const auto s = cfg.get_size("input_size"); s > 0) c.input_h = c.input_w = s;
  if (const auto s = cfg.get_size("base_width"); s > 0) c.base_width = s;
  if (const auto s = cfg.get_size("fusion_width"); s > 0) c.fusion_width = s;
  if (const auto s = cfg.get_size("attention_reduction"); s > 0) c.attention_reduction = s;
  if (const auto s = cfg.get_size("attention_kernel"); s > 0) c.attention_kernel = s;
  if (cfg.has("stage_blocks")) {
    c.stage_blocks.clear();
    for (const auto& p : cfg.get_list("stage_blocks")) c.stage_blocks.push_back(std::stoull(p));
  }
  if (cfg.has("attention_stages")) c.attention_stages = stage_set(cfg, "attention_stages");
  if (variant == Variant::enhanced) {
    if (cfg.has("multiscale_fusion")) c.enhanced.multiscale_fusion = cfg.get_bool("multiscale_fusion");
    if (cfg.has("dwsep_stages")) c.enhanced.dwsep_stages = stage_set(cfg, "dwsep_stages");
    if (cfg.has("dilated_stage5")) c.enhanced.dilated_stage5 = cfg.get_bool("dilated_stage5");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainOptions train_options(const RunConfig& cfg, const ModelConfig& model) {
  TrainOptions o;
  o.epochs = cfg.get_size("epochs");
  o.batch_size = cfg.get_size("batch_size");
  if (o.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  o.drop_last = cfg.get_bool("drop_last");
  o.schedule.initial = cfg.get_double("lr");
  o.schedule.factor = cfg.get_double("lr_factor");
  o.schedule.step = cfg.get_size("lr_step");
  o.batch.height = model.input_h;
  o.batch.width = model.input_w;
  o.batch.augment = cfg.get_bool("augment");
  o.batch.augment_options.hflip = cfg.get_bool("augment_hflip");
  o.batch.augment_options.vflip = cfg.get_bool("augment_vflip");
  o.batch.augment_options.rotate = cfg.get_bool("augment_rotate");
  o.batch.augment_options.max_degrees = cfg.get_double("rotation_degrees");
  o.batch.workers = std::max<std::size_t>(1, cfg.get_size("workers"));
  return o;
}

std::vector<Variant> compare_variants(const RunConfig& cfg) {
  std::vector<Variant> out;
  for (const auto& v : cfg.get_list("variants")) out.push_back(parse_variant(v));
  return out;
}

}  // namespace cbamnet
