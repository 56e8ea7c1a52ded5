#include "robustlens/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "robustlens/error.hpp"

namespace robustlens {

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < classes; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < classes; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, std::size_t classes) {
  if (labels.size() != predictions.size()) {
    throw DataError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                    std::to_string(predictions.size()) + " predictions");
  }
  if (classes == 0) throw DataError("confusion: class count must be positive");
  ConfusionMatrix cm{classes, std::vector<std::size_t>(classes * classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
      throw DataError("confusion: class id out of range at index " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(t) * classes + static_cast<std::size_t>(p)];
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

MetricsReport report(const ConfusionMatrix& cm, std::size_t positive_class) {
  if (positive_class >= cm.classes) throw DataError("report: positive class out of range");
  MetricsReport r;
  r.samples = cm.total();
  r.positive_class = positive_class;
  std::size_t diag = 0;
  for (std::size_t k = 0; k < cm.classes; ++k) diag += cm.at(k, k);
  r.accuracy = r.samples ? static_cast<double>(diag) / static_cast<double>(r.samples) : 0.0;
  if (r.samples == 0) r.zero_division = true;

  for (std::size_t k = 0; k < cm.classes; ++k) {
    ClassMetrics c;
    const std::size_t tp = cm.at(k, k);
    const std::size_t predicted = cm.col_sum(k);
    const std::size_t actual = cm.row_sum(k);
    c.precision_undefined = predicted == 0;
    c.recall_undefined = actual == 0;
    c.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    c.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    c.f1 = f1_score(c.precision, c.recall);
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
    r.per_class.push_back(c);
  }
  const double k = static_cast<double>(cm.classes);
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  const ClassMetrics& pos = r.per_class[positive_class];
  r.precision = pos.precision;
  r.recall = pos.recall;
  r.f1 = pos.f1;
  r.zero_division = r.zero_division || pos.precision_undefined || pos.recall_undefined;
  return r;
}

double t_critical_95(std::size_t dof) {
  if (dof == 0) throw ConfigError("t critical value needs at least one degree of freedom");
  const boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 0.975);
}

MeanInterval mean_interval(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw ConfigError("confidence interval needs at least 2 rounds, got " + std::to_string(n));
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, t_critical_95(n - 1) * sd / std::sqrt(static_cast<double>(n))};
}

RoundsAggregate aggregate(const std::vector<MetricsReport>& rounds) {
  if (rounds.size() < 2) {
    throw ConfigError("aggregate needs at least 2 rounds, got " + std::to_string(rounds.size()));
  }
  RoundsAggregate a;
  a.rounds = rounds;
  auto column = [&](double MetricsReport::*field) {
    std::vector<double> v;
    for (const auto& r : rounds) v.push_back(r.*field);
    return mean_interval(v);
  };
  a.accuracy = column(&MetricsReport::accuracy);
  a.precision = column(&MetricsReport::precision);
  a.recall = column(&MetricsReport::recall);
  a.f1 = column(&MetricsReport::f1);
  a.macro_precision = column(&MetricsReport::macro_precision);
  a.macro_recall = column(&MetricsReport::macro_recall);
  a.macro_f1 = column(&MetricsReport::macro_f1);
  return a;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.classes; ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    per.push_back({{"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"precision_undefined", c.precision_undefined},
                   {"recall_undefined", c.recall_undefined}});
  }
  return nlohmann::json{{"samples", r.samples},
                        {"positive_class", r.positive_class},
                        {"accuracy", r.accuracy},
                        {"precision", r.precision},
                        {"recall", r.recall},
                        {"f1", r.f1},
                        {"zero_division", r.zero_division},
                        {"macro_precision", r.macro_precision},
                        {"macro_recall", r.macro_recall},
                        {"macro_f1", r.macro_f1},
                        {"per_class", per}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.samples = j.at("samples").get<std::size_t>();
    r.positive_class = j.at("positive_class").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.zero_division = j.value("zero_division", false);
    r.macro_precision = j.at("macro_precision").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (const auto& c : j.at("per_class")) {
      r.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(), c.at("f1").get<double>(),
                             c.value("precision_undefined", false), c.value("recall_undefined", false)});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report: ") + e.what());
  }
}

namespace {

nlohmann::json interval_json(const MeanInterval& m) { return {{"mean", m.mean}, {"half_width", m.half_width}}; }

std::string cell(const std::vector<MetricsReport>& rounds, double MetricsReport::*field) {
  char buf[64];
  std::vector<double> v;
  for (const auto& r : rounds) v.push_back(r.*field);
  if (v.size() >= 2) {
    const MeanInterval m = mean_interval(v);
    std::snprintf(buf, sizeof buf, "%.4f \xC2\xB1 %.4f", m.mean, m.half_width);
  } else if (v.size() == 1) {
    std::snprintf(buf, sizeof buf, "%.4f", v[0]);
  } else {
    std::snprintf(buf, sizeof buf, "n/a");
  }
  return buf;
}

// Display width, counting each UTF-8 code point once.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

}  // namespace

nlohmann::json to_json(const RoundsAggregate& a) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : a.rounds) rounds.push_back(to_json(r));
  return nlohmann::json{{"n", a.rounds.size()},
                        {"accuracy", interval_json(a.accuracy)},
                        {"precision", interval_json(a.precision)},
                        {"recall", interval_json(a.recall)},
                        {"f1", interval_json(a.f1)},
                        {"macro_precision", interval_json(a.macro_precision)},
                        {"macro_recall", interval_json(a.macro_recall)},
                        {"macro_f1", interval_json(a.macro_f1)},
                        {"rounds", rounds}};
}

std::string format_table(const std::vector<TableRow>& rows) {
  const std::vector<std::string> header{"Model", "Accuracy", "Precision", "Recall", "F1-score"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& row : rows) {
    cells.push_back({row.model + (row.perturbed ? "*" : ""), cell(row.rounds, &MetricsReport::accuracy),
                     cell(row.rounds, &MetricsReport::precision), cell(row.rounds, &MetricsReport::recall),
                     cell(row.rounds, &MetricsReport::f1)});
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& r : cells)
    for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], display_width(r[c]));

  std::ostringstream os;
  auto rule = [&] {
    std::size_t total = 0;
    for (std::size_t w : widths) total += w;
    os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
  };
  rule();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& s = cells[i][c];
      if (c) os << "  ";
      os << s;
      if (c + 1 < cells[i].size()) os << std::string(widths[c] - display_width(s), ' ');
    }
    os << '\n';
    if (i == 0) rule();
  }
  rule();
  return os.str();
}

nlohmann::json table_to_json(const std::vector<TableRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j{{"model", row.model}, {"perturbed", row.perturbed}, {"n", row.rounds.size()}};
    if (row.rounds.size() >= 2) {
      j["aggregate"] = to_json(aggregate(row.rounds));
    } else {
      nlohmann::json rounds = nlohmann::json::array();
      for (const auto& r : row.rounds) rounds.push_back(to_json(r));
      j["rounds"] = rounds;
    }
    out.push_back(j);
  }
  return out;
}

}  // namespace robustlens
