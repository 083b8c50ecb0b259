#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcog/metrics.hpp"

namespace evcog {

struct DatasetScore {
  std::size_t n_problems = 0;
  double r2_insample = 0.0;
  double r2_insample_adjusted = 0.0;
  bool has_cv = false;
  double r2_cv_mean = 0.0;
  double r2_cv_se = 0.0;
};

struct ReportRow {
  std::string model_tag;
  std::string training_data_tag;
  std::map<std::string, DatasetScore> scores;  // keyed by dataset name
};

// One row per model, per-dataset R2 in-sample and cross-validated.
struct ComparisonReport {
  std::vector<ReportRow> rows;

  // Copies the numbers of `fit` into the row (model_tag, training_data_tag),
  // creating it when needed.
  void add(const std::string& model_tag, const std::string& training_data_tag, const std::string& dataset,
           const FitResult& fit);
  std::vector<std::string> datasets() const;  // sorted union
};

void to_json(nlohmann::json& j, const ComparisonReport& r);
void from_json(const nlohmann::json& j, ComparisonReport& r);

enum class ReportFormat { Csv, Json, Text, Svg };
ReportFormat parse_report_format(const std::string& s);  // UsageError on unknown names
std::string extension(ReportFormat f);

// Deterministic rendering. CSV is long format, one line per (row, dataset):
//   model,training_data,dataset,n,r2_insample,r2_insample_adjusted,has_cv,r2_cv_mean,r2_cv_se
// Throws UsageError on an empty report.
std::string render_report(const ComparisonReport& report, ReportFormat format);
ComparisonReport report_from_csv(const std::string& text);

}  // namespace evcog
