#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbamnet/data.hpp"
#include "cbamnet/metrics.hpp"
#include "cbamnet/model.hpp"
#include "cbamnet/train.hpp"

namespace cbamnet {

/// Invalid configuration or command line; the CLI exits with status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key=value configuration. Every key is declared up front with a type
/// and default; unknown keys and malformed values throw ConfigError.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string type;
    std::string fallback;
    std::string help;
  };
  static const std::vector<Key>& keys();

  RunConfig();

  /// `#` starts a comment; blank lines are ignored; `source` names the origin
  /// in error messages.
  void parse(const std::string& text, const std::string& source = "config");
  void load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return !get(key).empty(); }
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Every key in sorted order, including defaults.
  std::string resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

ModelConfig model_config(const RunConfig& cfg, Variant variant, std::size_t num_classes);
TrainOptions train_options(const RunConfig& cfg, const ModelConfig& model);
std::vector<Variant> compare_variants(const RunConfig& cfg);

struct PreparedData {
  Dataset full;
  Dataset train;
  Dataset test;
  Dataset fit;
  Dataset val;
  Normalization norm;
  CleaningReport cleaning;
};

/// Scan -> optional class exclusion -> 80:20 split -> validation split ->
/// normalization constants (config or fit-set statistics).
PreparedData prepare_data(const RunConfig& cfg, std::size_t height, std::size_t width);

struct RunOutcome {
  Variant variant = Variant::baseline;
  std::vector<EpochStats> log;
  MetricsReport report;
  std::filesystem::path best_checkpoint;
};

/// One full training run into `run_dir`: config echo, epochs.tsv,
/// checkpoints/, split.tsv and the test-set report of the best checkpoint.
RunOutcome run_training(const RunConfig& cfg, Variant variant, const PreparedData& data,
                        const std::filesystem::path& run_dir,
                        const std::optional<std::filesystem::path>& resume = std::nullopt);

/// report.txt (table), confusion.csv and metrics.json under `dir`.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);

/// compare.tsv: header plus one `variant test_accuracy macro_f1` row per run.
std::string compare_table(const std::vector<RunOutcome>& runs);

/// Entry point of the command-line tool. Returns the process exit status:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace cbamnet
