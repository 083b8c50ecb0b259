#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evcog {

// Squared Pearson correlation; 0 when either side has zero variance.
double squared_pearson(std::span<const double> a, std::span<const double> b);

// 1 - (1 - r2)(n - 1)/(n - p - 1). Returns r2 unchanged when n <= p + 1.
double adjusted_r2(double r2, std::size_t n, std::size_t predictors);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
MeanSe mean_se(std::span<const double> values);

// Assigns each of n items to one of k folds of near-equal size after a seeded
// shuffle. With groups, whole groups are assigned together.
std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed);
std::vector<int> make_group_folds(const std::vector<std::string>& groups, int k, std::uint64_t seed);

// Order-independent digest of a set of ids, logged per fold to audit that
// training and validation never overlap.
std::string id_set_digest(std::vector<std::string> ids);

// Common result type for every model that predicts choice rates.
struct FitResult {
  std::string model_tag;
  std::string dataset_tag;
  std::vector<std::string> problem_ids;
  std::vector<double> observed_rates;
  std::vector<double> predicted_rates;
  nlohmann::json params = nlohmann::json::object();
  std::vector<double> coefficients;
  std::size_t n_predictors = 0;  // nonzero coefficients, or free parameters
  double r2_insample = 0.0;      // squared Pearson r
  double r2_insample_adjusted = 0.0;
  bool has_cv = false;
  double r2_cv_mean = 0.0;
  double r2_cv_se = 0.0;
  std::vector<double> r2_cv_folds;
  std::vector<int> fold_assignments;
  nlohmann::json diagnostics = nlohmann::json::object();

  // problem_id,observed,predicted[,fold]
  std::string predictions_csv() const;
};

void to_json(nlohmann::json& j, const FitResult& r);
void from_json(const nlohmann::json& j, FitResult& r);

}  // namespace evcog
