#include "cbamnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace cbamnet {

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The nudge keeps decimal ties such as 0.865 (stored as 0.86499999...) rounding up.
  return std::floor(value * scale + 0.5 + 1e-9) / scale;
}

namespace {

void aggregate(MetricsReport& r) {
  const std::size_t k = r.per_class.size();
  r.total = 0;
  r.macro = {};
  r.weighted = {};
  for (const auto& c : r.per_class) r.total += c.support;
  for (const auto& c : r.per_class) {
    r.macro.precision += c.precision / static_cast<double>(k);
    r.macro.recall += c.recall / static_cast<double>(k);
    r.macro.f1 += c.f1 / static_cast<double>(k);
    if (r.total > 0) {
      const double w = static_cast<double>(c.support) / static_cast<double>(r.total);
      r.weighted.precision += w * c.precision;
      r.weighted.recall += w * c.recall;
      r.weighted.f1 += w * c.f1;
    }
  }
  r.macro.support = r.weighted.support = r.total;
}

}  // namespace

MetricsReport MetricsReport::from_confusion(const std::vector<std::vector<std::size_t>>& confusion,
                                            std::vector<std::string> classes) {
  const std::size_t k = confusion.size();
  if (classes.size() != k) throw std::invalid_argument("confusion matrix and class list disagree");
  for (const auto& row : confusion) {
    if (row.size() != k) throw std::invalid_argument("confusion matrix must be square");
  }
  MetricsReport r;
  r.classes = std::move(classes);
  r.confusion = confusion;
  r.per_class.resize(k);
  std::size_t correct = 0, total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = confusion[c][c], row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion[c][j];
      col += confusion[j][c];
    }
    auto& m = r.per_class[c];
    m.precision = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    m.recall = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    m.f1 = f1_score(m.precision, m.recall);
    m.support = row;
    correct += tp;
    total += row;
  }
  aggregate(r);
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

MetricsReport MetricsReport::from_rows(const std::vector<ClassMetrics>& rows,
                                       std::vector<std::string> classes) {
  if (classes.size() != rows.size()) throw std::invalid_argument("rows and class list disagree");
  MetricsReport r;
  r.classes = std::move(classes);
  r.per_class = rows;
  for (auto& m : r.per_class) m.f1 = f1_score(m.precision, m.recall);
  aggregate(r);
  r.accuracy = r.weighted.recall;
  return r;
}

MetricsReport MetricsReport::from_predictions(const std::vector<std::size_t>& truth,
                                              const std::vector<std::size_t>& predicted,
                                              std::vector<std::string> classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("prediction count mismatch");
  const std::size_t k = classes.size();
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) throw std::out_of_range("class index out of range");
    ++cm[truth[i]][predicted[i]];
  }
  return from_confusion(cm, std::move(classes));
}

std::string MetricsReport::table() const {
  std::size_t name_w = 14;
  for (const auto& c : classes) name_w = std::max(name_w, c.size() + 2);
  std::string out;
  char buf[256];
  auto line = [&](const std::string& name, const char* p, const char* r, const char* f,
                  std::size_t support) {
    std::snprintf(buf, sizeof buf, "%-*s %9s %9s %9s %9zu\n", static_cast<int>(name_w), name.c_str(),
                  p, r, f, support);
    out += buf;
  };
  auto fmt = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", round_half_up(v));
    return std::string(b);
  };
  std::snprintf(buf, sizeof buf, "%-*s %9s %9s %9s %9s\n", static_cast<int>(name_w), "Class",
                "Precision", "Recall", "F1-Score", "Support");
  out += buf;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    line(classes[c], fmt(m.precision).c_str(), fmt(m.recall).c_str(), fmt(m.f1).c_str(), m.support);
  }
  line("Accuracy", "", "", fmt(accuracy).c_str(), total);
  line("Macro Avg.", fmt(macro.precision).c_str(), fmt(macro.recall).c_str(), fmt(macro.f1).c_str(),
       total);
  line("Weighted Avg.", fmt(weighted.precision).c_str(), fmt(weighted.recall).c_str(),
       fmt(weighted.f1).c_str(), total);
  return out;
}

std::string MetricsReport::confusion_csv() const {
  std::string out = "true\\predicted";
  for (const auto& c : classes) out += "," + c;
  out += "\n";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    out += classes[i];
    for (std::size_t v : confusion[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

namespace {

nlohmann::json row_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

ClassMetrics row_from(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("support").get<std::size_t>()};
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["classes"] = classes;
  j["confusion"] = confusion;
  j["per_class"] = nlohmann::json::array();
  for (const auto& m : per_class) j["per_class"].push_back(row_json(m));
  j["accuracy"] = accuracy;
  j["macro"] = row_json(macro);
  j["weighted"] = row_json(weighted);
  j["total"] = total;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.classes = j.at("classes").get<std::vector<std::string>>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  for (const auto& row : j.at("per_class")) r.per_class.push_back(row_from(row));
  r.accuracy = j.at("accuracy").get<double>();
  r.macro = row_from(j.at("macro"));
  r.weighted = row_from(j.at("weighted"));
  r.total = j.at("total").get<std::size_t>();
  return r;
}

}  // namespace cbamnet
