#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace robustlens {

/// K x K counts; rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t pred) const;
};

/// Throws DataError on out-of-range class ids or length mismatch.
ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, std::size_t classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no predicted positives
  bool recall_undefined = false;     // no actual positives
};

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t positive_class = 1;
  double accuracy = 0.0;
  // Headline values: one-vs-rest for the positive class.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_division = false;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Undefined ratios evaluate to 0 and set the matching flag.
MetricsReport report(const ConfusionMatrix& cm, std::size_t positive_class);

/// Harmonic mean, 0 when both inputs are 0.
double f1_score(double precision, double recall);

struct MeanInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean +/- t(0.975, n-1) * s / sqrt(n). Requires n >= 2.
MeanInterval mean_interval(std::span<const double> values);

/// Two-sided 95% Student-t critical value for `dof` degrees of freedom.
double t_critical_95(std::size_t dof);

struct RoundsAggregate {
  std::vector<MetricsReport> rounds;
  MeanInterval accuracy, precision, recall, f1;
  MeanInterval macro_precision, macro_recall, macro_f1;
};

/// Throws ConfigError when fewer than two rounds are given.
RoundsAggregate aggregate(const std::vector<MetricsReport>& rounds);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoundsAggregate& a);

/// One row of a results table; `perturbed` rows are starred.
struct TableRow {
  std::string model;
  bool perturbed = false;
  std::vector<MetricsReport> rounds;
};

/// Aligned text table with Accuracy / Precision / Recall / F1-score columns,
/// "mean ± half-width" cells (plain means when a row has a single round).
std::string format_table(const std::vector<TableRow>& rows);
nlohmann::json table_to_json(const std::vector<TableRow>& rows);

}  // namespace robustlens
