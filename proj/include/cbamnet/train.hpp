#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cbamnet/data.hpp"
#include "cbamnet/metrics.hpp"
#include "cbamnet/model.hpp"

namespace cbamnet {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  std::vector<Tensor<T>> m;  // first moments, parameter order
  std::vector<Tensor<T>> v;  // second moments
  std::uint64_t t = 0;
  double lr = 1e-4;
  AdamOptions options;

  static OptimizerState fresh(const TensorList<T>& params, AdamOptions options = {});
};

/// One Adam update with explicit gradients (one span per parameter).
template <class T>
void adam_step(const std::vector<Tensor<T>>& params, const std::vector<std::span<const T>>& grads,
               OptimizerState<T>& state);
/// Uses each parameter's accumulated gradient; a missing gradient counts as zero.
template <class T>
void adam_step(const TensorList<T>& params, OptimizerState<T>& state);

/// lr = initial * factor^floor(epoch / step).
struct LrSchedule {
  double initial = 1e-4;
  double factor = 0.1;
  std::size_t step = 10;

  double at(std::size_t epoch) const;
};

inline double lr_schedule(std::size_t epoch) { return LrSchedule{}.at(epoch); }

template <class T>
struct TrainState {
  Model<T> model;
  OptimizerState<T> optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  double best_val_acc = -1.0;
  std::int64_t best_epoch = -1;
  Normalization norm;
  std::vector<std::string> classes;

  static TrainState create(const ModelConfig& config, std::uint64_t seed, AdamOptions adam = {});
};

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  bool drop_last = false;
  LrSchedule schedule;
  BatchOptions batch;  // input size, normalization (overwritten from state), augmentation, workers
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;

  /// Tab-separated `epoch lr train_loss train_acc val_loss val_acc`.
  std::string to_line() const;
  bool operator==(const EpochStats&) const = default;
};

struct EvalResult {
  MetricsReport report;
  double loss = 0.0;
};

/// Shuffles with a stream derived from (state.seed, epoch), then for each
/// batch: augment, forward in train mode, cross-entropy, backward, Adam.
/// Returns stats with the validation fields left at zero.
template <class T>
EpochStats train_epoch(TrainState<T>& state, const Dataset& fit, const TrainOptions& options,
                       std::size_t epoch);

/// Eval-mode forward over every sample, argmax with lowest-index ties.
template <class T>
EvalResult evaluate(const Model<T>& model, const Dataset& ds, std::size_t batch_size,
                    const BatchOptions& batch);

template <class T>
std::size_t argmax_row(std::span<const T> row);

/// Writes checkpoints/epoch_XXX.cbck each epoch, checkpoints/best.txt naming
/// the best-validation checkpoint, and appends epochs.tsv. Continues from
/// state.epoch, so a loaded checkpoint resumes the run.
template <class T>
std::vector<EpochStats> fit(TrainState<T>& state, const Dataset& fit_set, const Dataset& val_set,
                            const TrainOptions& options, const std::filesystem::path& run_dir,
                            const std::function<void(const EpochStats&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Checkpoints:
//   "CBCK" | u16 version | string canonical config | u64 tensor count |
//   (string name, tensor body)* | optimizer (u64 t, f64 lr, beta1, beta2, eps,
//   u64 count, m bodies, v bodies) | u64 epoch | u64 seed | f64 best acc |
//   u64 best epoch + 1 | 6 x f64 normalization | u64 class count, strings

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <class T>
std::string checkpoint_bytes(const TrainState<T>& state);
template <class T>
void checkpoint_save(const TrainState<T>& state, const std::filesystem::path& path);
/// Builds a fresh state from the stored configuration.
template <class T>
TrainState<T> checkpoint_load(const std::filesystem::path& path);
/// Strict load into an existing state: any mismatch throws before anything
/// in `state` changes.
template <class T>
void checkpoint_load_into(TrainState<T>& state, const std::filesystem::path& path);
/// Reads only the configuration block.
ModelConfig checkpoint_config(const std::filesystem::path& path);

std::string checkpoint_name(std::size_t epoch);

}  // namespace cbamnet
