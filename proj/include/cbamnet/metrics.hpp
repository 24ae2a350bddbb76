#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cbamnet {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// 2PR/(P+R), 0 when P+R = 0.
double f1_score(double precision, double recall);
/// Half-up rounding used for every human-readable table.
double round_half_up(double value, int decimals = 2);

struct MetricsReport {
  std::vector<std::string> classes;
  /// rows = true class, cols = predicted; empty when built from rows.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  ClassMetrics macro;
  ClassMetrics weighted;
  std::size_t total = 0;

  static MetricsReport from_confusion(const std::vector<std::vector<std::size_t>>& confusion,
                                      std::vector<std::string> classes);
  /// Aggregates published per-class precision/recall/support rows. F1 is
  /// recomputed from P and R; accuracy is the support-weighted recall.
  static MetricsReport from_rows(const std::vector<ClassMetrics>& rows,
                                 std::vector<std::string> classes);
  static MetricsReport from_predictions(const std::vector<std::size_t>& truth,
                                        const std::vector<std::size_t>& predicted,
                                        std::vector<std::string> classes);

  /// Class / Precision / Recall / F1-Score / Support, then Accuracy, Macro
  /// Avg. and Weighted Avg. rows, values at 2 decimals.
  std::string table() const;
  /// Confusion matrix with class-name header row and first column.
  std::string confusion_csv() const;
  /// Full-precision structured form.
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

}  // namespace cbamnet
