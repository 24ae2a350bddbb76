#include <cmath>
#include <sstream>

#include "cbamnet/data.hpp"
#include "cbamnet/metrics.hpp"
#include "doctest.h"

using namespace cbamnet;

namespace {

const std::vector<std::string> kShips{"Bulk Carrier", "Cargo", "Container", "Oil Tanker"};

std::vector<ClassMetrics> rows(const std::vector<double>& p, const std::vector<double>& r,
                               const std::vector<std::size_t>& n) {
  std::vector<ClassMetrics> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back({p[i], r[i], 0.0, n[i]});
  return out;
}

std::string two(double v) {
  char b[16];
  std::snprintf(b, sizeof b, "%.2f", round_half_up(v));
  return b;
}

// Direct sums over the published rows.
struct Summary {
  double acc, mp, mr, mf, wp, wr, wf;
};

Summary summarize(const std::vector<ClassMetrics>& rs) {
  double total = 0.0;
  for (const auto& r : rs) total += static_cast<double>(r.support);
  Summary s{};
  for (const auto& r : rs) {
    const double f = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    const double w = static_cast<double>(r.support) / total;
    s.mp += r.precision / 4.0;
    s.mr += r.recall / 4.0;
    s.mf += f / 4.0;
    s.wp += w * r.precision;
    s.wr += w * r.recall;
    s.wf += w * f;
  }
  s.acc = s.wr;
  return s;
}

std::vector<std::string> table_line(const std::string& table, const std::string& name) {
  std::istringstream in(table);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(name, 0) != 0) continue;
    std::istringstream fields(line.substr(name.size()));
    std::vector<std::string> out;
    std::string f;
    while (fields >> f) out.push_back(f);
    return out;
  }
  return {};
}

void check_report(const MetricsReport& m, const Summary& s) {
  CHECK(std::abs(m.accuracy - s.acc) < 1e-12);
  CHECK(std::abs(m.macro.precision - s.mp) < 1e-12);
  CHECK(std::abs(m.macro.recall - s.mr) < 1e-12);
  CHECK(std::abs(m.macro.f1 - s.mf) < 1e-12);
  CHECK(std::abs(m.weighted.precision - s.wp) < 1e-12);
  CHECK(std::abs(m.weighted.recall - s.wr) < 1e-12);
  CHECK(std::abs(m.weighted.f1 - s.wf) < 1e-12);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("published standard-cbam table") {
  const auto rs = rows({0.83, 0.93, 0.85, 0.88}, {0.81, 0.90, 0.76, 0.94}, {411, 308, 258, 691});
  const auto m = MetricsReport::from_rows(rs, kShips);
  check_report(m, summarize(rs));
  CHECK(m.total == 1668);
  CHECK(two(m.accuracy) == "0.87");
  CHECK(two(m.macro.precision) == "0.87");
  CHECK(two(m.macro.recall) == "0.85");
  CHECK(two(m.macro.f1) == "0.86");
  CHECK(two(m.weighted.precision) == "0.87");
  CHECK(two(m.weighted.recall) == "0.87");
  CHECK(two(m.weighted.f1) == "0.87");
  CHECK(std::abs(m.weighted.precision - 0.872) < 5e-4);
  // Per-class F1 column of the table.
  const std::vector<std::string> f1{"0.82", "0.91", "0.80", "0.91"};
  for (std::size_t c = 0; c < 4; ++c) CHECK(two(m.per_class[c].f1) == f1[c]);

  const std::string t = m.table();
  CHECK(table_line(t, "Accuracy") == std::vector<std::string>{"0.87", "1668"});
  CHECK(table_line(t, "Macro Avg.") == std::vector<std::string>{"0.87", "0.85", "0.86", "1668"});
  CHECK(table_line(t, "Weighted Avg.") == std::vector<std::string>{"0.87", "0.87", "0.87", "1668"});
  CHECK(table_line(t, "Oil Tanker") == std::vector<std::string>{"0.88", "0.94", "0.91", "691"});
}

TEST_CASE("published improved-cbam table") {
  const auto rs = rows({0.94, 0.94, 0.91, 0.98}, {0.95, 0.93, 0.90, 0.98}, {405, 330, 254, 679});
  const auto m = MetricsReport::from_rows(rs, kShips);
  check_report(m, summarize(rs));
  CHECK(m.total == 1668);
  CHECK(std::abs(m.macro.precision - 0.9425) < 1e-12);
  const std::string t = m.table();
  CHECK(table_line(t, "Accuracy") == std::vector<std::string>{"0.95", "1668"});
  CHECK(table_line(t, "Macro Avg.") == std::vector<std::string>{"0.94", "0.94", "0.94", "1668"});
  CHECK(table_line(t, "Weighted Avg.") == std::vector<std::string>{"0.95", "0.95", "0.95", "1668"});
  // F1 from the rounded P/R: Cargo gives 0.935 -> 0.93 where the table prints 0.94.
  const std::vector<std::string> f1{"0.94", "0.93", "0.90", "0.98"};
  for (std::size_t c = 0; c < 4; ++c) CHECK(two(m.per_class[c].f1) == f1[c]);
}

TEST_CASE("rounding") {
  CHECK(round_half_up(0.865) == doctest::Approx(0.87));
  CHECK(round_half_up(0.8649) == doctest::Approx(0.86));
  CHECK(round_half_up(0.125) == doctest::Approx(0.13));
  CHECK(round_half_up(1.0) == 1.0);
  CHECK(f1_score(0.0, 0.0) == 0.0);
  CHECK(f1_score(1.0, 1.0) == 1.0);
  CHECK(f1_score(0.5, 1.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("perfect predictions") {
  std::vector<std::size_t> truth{0, 1, 2, 3, 3, 2, 1, 0, 0};
  const auto m = MetricsReport::from_predictions(truth, truth, kShips);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK((i == j) == (m.confusion[i][j] > 0));
  CHECK(m.accuracy == 1.0);
  for (const auto& c : m.per_class) {
    CHECK(c.precision == 1.0);
    CHECK(c.recall == 1.0);
    CHECK(c.f1 == 1.0);
  }
  CHECK(m.macro.f1 == 1.0);
  CHECK(m.weighted.f1 == 1.0);
  CHECK(table_line(m.table(), "Accuracy") == std::vector<std::string>{"1.00", "9"});
}

TEST_CASE("confusion-matrix invariants") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.below(4), n = 1 + rng.below(300);
    std::vector<std::size_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = rng.below(k);
      pred[i] = rng.uniform() < 0.6 ? truth[i] : rng.below(k);
    }
    std::vector<std::string> names;
    for (std::size_t c = 0; c < k; ++c) names.push_back("k" + std::to_string(c));
    const auto m = MetricsReport::from_predictions(truth, pred, names);

    std::size_t sum = 0, trace = 0;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t row = 0;
      for (std::size_t j = 0; j < k; ++j) row += m.confusion[i][j];
      CHECK(row == m.per_class[i].support);
      sum += row;
      trace += m.confusion[i][i];
    }
    CHECK(sum == n);
    CHECK(m.total == n);
    CHECK(m.accuracy == static_cast<double>(trace) / static_cast<double>(n));
    // Weighted recall is accuracy.
    CHECK(std::abs(m.weighted.recall - m.accuracy) < 1e-12);
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += truth[i] == c && pred[i] == c;
        fp += truth[i] != c && pred[i] == c;
        fn += truth[i] == c && pred[i] != c;
      }
      const double p = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
      const double r = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
      CHECK(m.per_class[c].precision == doctest::Approx(p).epsilon(1e-12));
      CHECK(m.per_class[c].recall == doctest::Approx(r).epsilon(1e-12));
      const auto& pc = m.per_class[c];
      CHECK(pc.f1 <= std::max(pc.precision, pc.recall) + 1e-12);
      CHECK(pc.f1 >= std::min(pc.precision, pc.recall) - 1e-12);
    }
  }
}

TEST_CASE("missing predictions give zero precision") {
  const auto m = MetricsReport::from_predictions({0, 1, 1}, {0, 0, 0}, {"a", "b"});
  CHECK(m.per_class[1].precision == 0.0);
  CHECK(m.per_class[1].recall == 0.0);
  CHECK(m.per_class[1].f1 == 0.0);
  CHECK(std::isfinite(m.macro.f1));
  CHECK_THROWS(MetricsReport::from_predictions({0, 2}, {0, 0}, {"a", "b"}));
  CHECK_THROWS(MetricsReport::from_predictions({0}, {0, 0}, {"a", "b"}));
}

TEST_CASE("confusion csv") {
  const auto m = MetricsReport::from_predictions({0, 0, 1, 2, 2, 2}, {0, 1, 1, 2, 0, 2}, {"x", "y", "z"});
  CHECK(m.confusion_csv() == "true\\predicted,x,y,z\nx,1,1,0\ny,0,1,0\nz,1,0,2\n");
}

TEST_CASE("json round trip") {
  const auto m = MetricsReport::from_predictions({0, 0, 1, 2, 2, 2, 1}, {0, 1, 1, 2, 0, 2, 2}, {"x", "y", "z"});
  const auto back = MetricsReport::from_json(m.to_json());
  CHECK(back.classes == m.classes);
  CHECK(back.confusion == m.confusion);
  CHECK(back.accuracy == m.accuracy);
  CHECK(back.macro.f1 == m.macro.f1);
  CHECK(back.weighted.precision == m.weighted.precision);
  for (std::size_t c = 0; c < 3; ++c) CHECK(back.per_class[c].f1 == m.per_class[c].f1);
  CHECK(back.to_json() == m.to_json());
  CHECK(back.table() == m.table());
}

}  // TEST_SUITE
