#include "cbamnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cbamnet/trace.hpp"
#include "cbamnet/tensor_io.hpp"

namespace cbamnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Adam

template <class T>
OptimizerState<T> OptimizerState<T>::fresh(const TensorList<T>& params, AdamOptions options) {
  OptimizerState s;
  s.options = options;
  for (const auto& p : params) {
    s.m.push_back(Tensor<T>::zeros(p.tensor.shape()));
    s.v.push_back(Tensor<T>::zeros(p.tensor.shape()));
  }
  return s;
}

template <class T>
void adam_step(const std::vector<Tensor<T>>& params, const std::vector<std::span<const T>>& grads,
               OptimizerState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].numel();
    if ((!grads[i].empty() && grads[i].size() != n) || state.m[i].numel() != n ||
        state.v[i].numel() != n) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  if (!(state.lr >= 0.0)) throw std::invalid_argument("adam_step: negative learning rate");
  state.t += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* theta = params[i].node().data.data();
    T* m = state.m[i].node().data.data();
    T* v = state.v[i].node().data.data();
    const std::size_t n = params[i].numel();
    for (std::size_t k = 0; k < n; ++k) {
      const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][k]);
      const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double step = state.lr * (mk / c1) / (std::sqrt(vk / c2) + o.eps);
      theta[k] = static_cast<T>(theta[k] - step);
    }
  }
}

template <class T>
void adam_step(const TensorList<T>& params, OptimizerState<T>& state) {
  std::vector<Tensor<T>> ps;
  std::vector<std::span<const T>> gs;
  for (const auto& p : params) {
    ps.push_back(p.tensor);
    gs.push_back(p.tensor.has_grad() ? std::span<const T>(p.tensor.grad()) : std::span<const T>());
  }
  adam_step(ps, gs, state);
}

double LrSchedule::at(std::size_t epoch) const {
  if (step == 0) return initial;
  return initial * std::pow(factor, static_cast<double>(epoch / step));
}

template <class T>
TrainState<T> TrainState<T>::create(const ModelConfig& config, std::uint64_t seed, AdamOptions adam) {
  TrainState s{Model<T>::build(config, seed), {}, 0, seed, -1.0, -1, {}, {}};
  s.optimizer = OptimizerState<T>::fresh(s.model.parameters(), adam);
  return s;
}

std::string EpochStats::to_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", epoch, lr, train_loss, train_acc,
                val_loss, val_acc);
  return buf;
}

template <class T>
std::size_t argmax_row(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Loops

template <class T>
EpochStats train_epoch(TrainState<T>& state, const Dataset& fit, const TrainOptions& options,
                       std::size_t epoch) {
  if (options.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (fit.samples.empty()) throw std::invalid_argument("train_epoch on an empty set");
  std::vector<std::size_t> order(fit.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle(mix_seed(state.seed, epoch, 1));
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

  BatchOptions batch_opts = options.batch;
  batch_opts.norm = state.norm;
  const std::uint64_t augment_seed = mix_seed(state.seed, epoch, 2);
  const TensorList<T> params = state.model.parameters();
  for (const auto& p : params) p.tensor.node().requires_grad = true;
  state.optimizer.lr = options.schedule.at(epoch);

  EpochStats stats;
  stats.epoch = epoch + 1;
  stats.lr = state.optimizer.lr;
  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    const std::size_t end = std::min(order.size(), start + options.batch_size);
    if (options.drop_last && end - start < options.batch_size) break;
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
    Batch<T> batch = assemble_batch<T>(fit, idx, batch_opts, augment_seed);
    for (const auto& p : params) p.tensor.node().grad.clear();
    Tensor<T> logits;
    {
      Trace<T> trace;
      logits = state.model.forward(batch.images, Mode::train).logits;
      const Tensor<T> loss = cross_entropy(logits, batch.labels);
      trace.backward(loss);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }
    adam_step(params, state.optimizer);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (argmax_row<T>(logits.data().subspan(i * k, k)) == batch.labels[i]) ++correct;
    }
    seen += idx.size();
  }
  for (const auto& p : params) p.tensor.node().grad.clear();
  if (seen > 0) {
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
  }
  return stats;
}

template <class T>
EvalResult evaluate(const Model<T>& model, const Dataset& ds, std::size_t batch_size,
                    const BatchOptions& batch) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  NoTrace<T> guard;
  BatchOptions opts = batch;
  opts.augment = false;
  std::vector<std::size_t> truth, predicted;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    Batch<T> b = assemble_batch<T>(ds, idx, opts, 0);
    const Tensor<T> logits = model.forward(b.images, Mode::eval).logits;
    loss_sum += static_cast<double>(cross_entropy(logits, b.labels).item()) *
                static_cast<double>(idx.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      truth.push_back(b.labels[i]);
      predicted.push_back(argmax_row<T>(logits.data().subspan(i * k, k)));
    }
  }
  EvalResult r;
  r.report = MetricsReport::from_predictions(truth, predicted, ds.classes);
  r.loss = ds.size() == 0 ? 0.0 : loss_sum / static_cast<double>(ds.size());
  return r;
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.cbck", epoch);
  return buf;
}

namespace {

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

template <class T>
std::vector<EpochStats> fit(TrainState<T>& state, const Dataset& fit_set, const Dataset& val_set,
                            const TrainOptions& options, const fs::path& run_dir,
                            const std::function<void(const EpochStats&)>& on_epoch) {
  state.classes = fit_set.classes;
  std::vector<EpochStats> log;
  if (state.epoch >= options.epochs) return log;
  const fs::path ckpt_dir = run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  const fs::path log_path = run_dir / "epochs.tsv";
  std::ofstream log_file(log_path, state.epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!log_file) throw std::runtime_error("cannot write " + log_path.string());
  if (state.epoch == 0) log_file << "# epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";

  BatchOptions eval_opts = options.batch;
  for (std::size_t e = state.epoch; e < options.epochs; ++e) {
    EpochStats stats = train_epoch(state, fit_set, options, e);
    eval_opts.norm = state.norm;
    double selection = stats.train_acc;
    if (!val_set.samples.empty()) {
      const EvalResult ev = evaluate(state.model, val_set, options.batch_size, eval_opts);
      stats.val_loss = ev.loss;
      stats.val_acc = ev.report.accuracy;
      selection = stats.val_acc;
    }
    state.epoch = e + 1;
    const bool improved = selection > state.best_val_acc;
    if (improved) {
      state.best_val_acc = selection;
      state.best_epoch = static_cast<std::int64_t>(state.epoch);
    }
    log.push_back(stats);
    log_file << stats.to_line() << "\n";
    log_file.flush();
    // The log line is already on disk if the checkpoint write fails.
    checkpoint_save(state, ckpt_dir / checkpoint_name(state.epoch));
    if (improved) write_file_atomic(ckpt_dir / "best.txt", checkpoint_name(state.epoch) + "\n");
    if (on_epoch) on_epoch(stats);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'B', 'C', 'K'};

template <class T>
TensorList<T> state_tensors(const Model<T>& model) {
  TensorList<T> all = model.parameters();
  for (auto& b : model.buffers()) all.push_back(b);
  return all;
}

template <class T>
struct Parsed {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
  OptimizerState<T> optimizer;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double best_val_acc = -1.0;
  std::int64_t best_epoch = -1;
  Normalization norm;
  std::vector<std::string> classes;
};

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void read_header(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || !std::equal(magic, magic + 4, kMagic)) throw FormatError("checkpoint: bad magic");
  const std::uint16_t version = io::read_u16(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
}

template <class T>
Parsed<T> parse(const fs::path& path) {
  std::istringstream is(read_all(path));
  Parsed<T> p;
  read_header(is);
  p.config_text = io::read_string(is);
  const std::uint64_t count = io::read_u64(is);
  if (count > (1u << 20)) throw FormatError("checkpoint: implausible tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is, 4096);
    p.tensors.emplace_back(std::move(name), io::read_tensor_body<T>(is));
  }
  auto& o = p.optimizer;
  o.t = io::read_u64(is);
  o.lr = io::read_f64(is);
  o.options.beta1 = io::read_f64(is);
  o.options.beta2 = io::read_f64(is);
  o.options.eps = io::read_f64(is);
  const std::uint64_t moments = io::read_u64(is);
  if (moments > count) throw FormatError("checkpoint: moment count exceeds tensor count");
  for (std::uint64_t i = 0; i < moments; ++i) o.m.push_back(io::read_tensor_body<T>(is));
  for (std::uint64_t i = 0; i < moments; ++i) o.v.push_back(io::read_tensor_body<T>(is));
  p.epoch = io::read_u64(is);
  p.seed = io::read_u64(is);
  p.best_val_acc = io::read_f64(is);
  p.best_epoch = static_cast<std::int64_t>(io::read_u64(is)) - 1;
  for (double& v : p.norm.mean) v = io::read_f64(is);
  for (double& v : p.norm.std) v = io::read_f64(is);
  const std::uint64_t classes = io::read_u64(is);
  if (classes > 4096) throw FormatError("checkpoint: implausible class count");
  for (std::uint64_t i = 0; i < classes; ++i) p.classes.push_back(io::read_string(is, 4096));
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return p;
}

}  // namespace

template <class T>
std::string checkpoint_bytes(const TrainState<T>& state) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  io::write_u16(os, kCheckpointVersion);
  io::write_string(os, state.model.config().canonical());
  const TensorList<T> all = state_tensors(state.model);
  io::write_u64(os, all.size());
  for (const auto& t : all) {
    io::write_string(os, t.name);
    io::write_tensor_body(os, t.tensor);
  }
  const auto& o = state.optimizer;
  io::write_u64(os, o.t);
  io::write_f64(os, o.lr);
  io::write_f64(os, o.options.beta1);
  io::write_f64(os, o.options.beta2);
  io::write_f64(os, o.options.eps);
  io::write_u64(os, o.m.size());
  for (const auto& m : o.m) io::write_tensor_body(os, m);
  for (const auto& v : o.v) io::write_tensor_body(os, v);
  io::write_u64(os, state.epoch);
  io::write_u64(os, state.seed);
  io::write_f64(os, state.best_val_acc);
  io::write_u64(os, static_cast<std::uint64_t>(state.best_epoch + 1));
  for (double v : state.norm.mean) io::write_f64(os, v);
  for (double v : state.norm.std) io::write_f64(os, v);
  io::write_u64(os, state.classes.size());
  for (const auto& c : state.classes) io::write_string(os, c);
  return os.str();
}

template <class T>
void checkpoint_save(const TrainState<T>& state, const fs::path& path) {
  write_file_atomic(path, checkpoint_bytes(state));
}

template <class T>
void checkpoint_load_into(TrainState<T>& state, const fs::path& path) {
  Parsed<T> p = parse<T>(path);
  const std::string expected = state.model.config().canonical();
  if (p.config_text != expected) {
    throw std::invalid_argument("checkpoint configuration does not match the model:\n--- checkpoint\n" +
                                p.config_text + "--- model\n" + expected);
  }
  const TensorList<T> all = state_tensors(state.model);
  if (p.tensors.size() != all.size()) {
    throw FormatError("checkpoint: tensor count " + std::to_string(p.tensors.size()) + " != " +
                      std::to_string(all.size()));
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (p.tensors[i].first != all[i].name || p.tensors[i].second.shape() != all[i].tensor.shape()) {
      throw FormatError("checkpoint: tensor '" + p.tensors[i].first + "' does not match '" +
                        all[i].name + "'");
    }
  }
  const std::size_t n_params = state.model.parameters().size();
  if (p.optimizer.m.size() != n_params) throw FormatError("checkpoint: optimizer moment count mismatch");
  const TensorList<T> params = state.model.parameters();
  for (std::size_t i = 0; i < n_params; ++i) {
    if (p.optimizer.m[i].shape() != params[i].tensor.shape() ||
        p.optimizer.v[i].shape() != params[i].tensor.shape()) {
      throw FormatError("checkpoint: optimizer moment shape mismatch for " + params[i].name);
    }
  }
  p.norm.validate();
  // Everything is verified; commit.
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto src = p.tensors[i].second.data();
    std::copy(src.begin(), src.end(), all[i].tensor.node().data.begin());
  }
  state.optimizer = std::move(p.optimizer);
  state.epoch = p.epoch;
  state.seed = p.seed;
  state.best_val_acc = p.best_val_acc;
  state.best_epoch = p.best_epoch;
  state.norm = p.norm;
  state.classes = std::move(p.classes);
}

ModelConfig checkpoint_config(const fs::path& path) {
  std::istringstream is(read_all(path));
  read_header(is);
  return ModelConfig::from_canonical(io::read_string(is));
}

template <class T>
TrainState<T> checkpoint_load(const fs::path& path) {
  TrainState<T> state = TrainState<T>::create(checkpoint_config(path), 0);
  checkpoint_load_into(state, path);
  return state;
}

#define CBAMNET_INSTANTIATE_TRAIN(T)                                                             \
  template struct OptimizerState<T>;                                                             \
  template void adam_step(const std::vector<Tensor<T>>&, const std::vector<std::span<const T>>&, \
                          OptimizerState<T>&);                                                   \
  template void adam_step(const TensorList<T>&, OptimizerState<T>&);                            \
  template struct TrainState<T>;                                                                 \
  template std::size_t argmax_row(std::span<const T>);                                          \
  template EpochStats train_epoch(TrainState<T>&, const Dataset&, const TrainOptions&,           \
                                  std::size_t);                                                  \
  template EvalResult evaluate(const Model<T>&, const Dataset&, std::size_t, const BatchOptions&); \
  template std::vector<EpochStats> fit(TrainState<T>&, const Dataset&, const Dataset&,           \
                                       const TrainOptions&, const fs::path&,                     \
                                       const std::function<void(const EpochStats&)>&);           \
  template std::string checkpoint_bytes(const TrainState<T>&);                                   \
  template void checkpoint_save(const TrainState<T>&, const fs::path&);                          \
  template TrainState<T> checkpoint_load(const fs::path&);                                       \
  template void checkpoint_load_into(TrainState<T>&, const fs::path&);

CBAMNET_INSTANTIATE_TRAIN(float)
CBAMNET_INSTANTIATE_TRAIN(double)

}  // namespace cbamnet
