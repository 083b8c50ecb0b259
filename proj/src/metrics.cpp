#include "evcog/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "csv.hpp"
#include "evcog/errors.hpp"
#include "evcog/hash.hpp"
#include "evcog/random.hpp"

namespace evcog {

double squared_pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("squared_pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab * sab / (saa * sbb), 0.0, 1.0);
}

double adjusted_r2(double r2, std::size_t n, std::size_t predictors) {
  if (n <= predictors + 1) return r2;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(predictors);
  return 1.0 - (1.0 - r2) * (nn - 1.0) / (nn - p - 1.0);
}

MeanSe mean_se(std::span<const double> values) {
  MeanSe out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("cv.k: must be >= 2");
  if (n < static_cast<std::size_t>(k)) throw TooSmallError("fewer items than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0xf01d);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> folds(n);
  for (std::size_t i = 0; i < n; ++i) folds[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return folds;
}

std::vector<int> make_group_folds(const std::vector<std::string>& groups, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("cv.k: must be >= 2");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  if (members.size() < static_cast<std::size_t>(k)) throw TooSmallError("fewer groups than folds");
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [_, m] : members) order.push_back(&m);
  Rng rng = make_rng(seed, 0xf01d);
  std::shuffle(order.begin(), order.end(), rng);
  // Largest groups first, each into the currently smallest fold.
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->size() > b->size(); });
  std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);
  std::vector<int> folds(groups.size());
  for (const auto* m : order) {
    auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    for (auto i : *m) folds[i] = static_cast<int>(f);
    load[f] += m->size();
  }
  return folds;
}

std::string id_set_digest(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return sha256_hex(joined);
}

std::string FitResult::predictions_csv() const {
  std::ostringstream out;
  out.precision(17);
  const bool folds = fold_assignments.size() == problem_ids.size() && !problem_ids.empty();
  out << "problem_id,observed,predicted" << (folds ? ",fold" : "") << '\n';
  for (std::size_t i = 0; i < problem_ids.size(); ++i) {
    out << csv::quote(problem_ids[i]) << ',' << observed_rates[i] << ',' << predicted_rates[i];
    if (folds) out << ',' << fold_assignments[i];
    out << '\n';
  }
  return out.str();
}

void to_json(nlohmann::json& j, const FitResult& r) {
  j = {{"model_tag", r.model_tag},
       {"dataset_tag", r.dataset_tag},
       {"problem_ids", r.problem_ids},
       {"observed_rates", r.observed_rates},
       {"predicted_rates", r.predicted_rates},
       {"params", r.params},
       {"coefficients", r.coefficients},
       {"n_predictors", r.n_predictors},
       {"r2_insample", r.r2_insample},
       {"r2_insample_adjusted", r.r2_insample_adjusted},
       {"has_cv", r.has_cv},
       {"r2_cv_mean", r.r2_cv_mean},
       {"r2_cv_se", r.r2_cv_se},
       {"r2_cv_folds", r.r2_cv_folds},
       {"fold_assignments", r.fold_assignments},
       {"diagnostics", r.diagnostics}};
}

void from_json(const nlohmann::json& j, FitResult& r) {
  r = FitResult{};
  r.model_tag = j.at("model_tag").get<std::string>();
  r.dataset_tag = j.value("dataset_tag", std::string());
  r.problem_ids = j.value("problem_ids", std::vector<std::string>{});
  r.observed_rates = j.value("observed_rates", std::vector<double>{});
  r.predicted_rates = j.value("predicted_rates", std::vector<double>{});
  r.params = j.value("params", nlohmann::json::object());
  r.coefficients = j.value("coefficients", std::vector<double>{});
  r.n_predictors = j.value("n_predictors", std::size_t{0});
  r.r2_insample = j.value("r2_insample", 0.0);
  r.r2_insample_adjusted = j.value("r2_insample_adjusted", 0.0);
  r.has_cv = j.value("has_cv", false);
  r.r2_cv_mean = j.value("r2_cv_mean", 0.0);
  r.r2_cv_se = j.value("r2_cv_se", 0.0);
  r.r2_cv_folds = j.value("r2_cv_folds", std::vector<double>{});
  r.fold_assignments = j.value("fold_assignments", std::vector<int>{});
  r.diagnostics = j.value("diagnostics", nlohmann::json::object());
}

}  // namespace evcog
