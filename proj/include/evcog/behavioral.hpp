#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "evcog/choicesets.hpp"
#include "evcog/metrics.hpp"
#include "evcog/utility.hpp"

namespace evcog {

enum class BehavioralModel { PT, Hyperbolic, EVLogit };
std::string to_string(BehavioralModel m);
BehavioralModel parse_behavioral_model(const std::string& s);

// Parameter bounds used by every fit.
struct FitBounds {
  double alpha_lo = 0.1, alpha_hi = 2.0;
  double beta_lo = 0.1, beta_hi = 2.0;
  double gamma_lo = 0.2, gamma_hi = 2.0;
  double lambda_lo = 1.0, lambda_hi = 5.0;
  double k_lo = 0.0, k_hi = 2.0;
  double temperature_lo = 0.0, temperature_hi = 100.0;
};

struct BehavioralFitOptions {
  int starts = 8;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 4000;
  // Holds the choice-rule temperature fixed instead of fitting it.
  std::optional<double> fixed_temperature;
  DiscountBases bases;  // present values for EV-logit on intertemporal problems
  FitBounds bounds;
};

// Weighted binomial negative log-likelihood of observed rates under predicted
// P(A): -sum n_i [r_i log p_i + (1 - r_i) log(1 - p_i)].
double binomial_nll(std::span<const double> rates, std::span<const double> weights, std::span<const double> predicted);

// Option value used by EV-logit: expected value for risky options (ambiguous
// outcomes weighted 1/n), d^t x present value for intertemporal ones.
double expected_value(std::span<const Outcome> option, const DiscountBases& bases = {});

// Population-level fit by multi-start Nelder-Mead on the binomial NLL.
// PT ignores problems with ambiguous outcomes (count in diagnostics).
// Throws FitError when every start fails and UsageError on a domain mismatch.
FitResult fit_behavioral(BehavioralModel model, const std::vector<ChoiceProblem>& problems,
                         const BehavioralFitOptions& options = {});

struct MLPConfig {
  int hidden_units = 320;
  double learning_rate = 0.01;
  std::size_t max_epochs = 3000;
  std::size_t patience = 100;  // epochs without holdout improvement
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Task features: risky (p1, x1, p2, x2) per option, 8 inputs, zero padded,
// ambiguous probabilities encoded as -1; intertemporal (x, t) per option.
Eigen::MatrixXd task_features(const std::vector<ChoiceProblem>& problems);

// One sigmoid hidden layer, sigmoid output, MSE on rates, full-batch Adam with
// early stopping on a holdout. Reports in-sample R2 and, when cv_folds > 1,
// k-fold CV R2 (grouped by problem group).
FitResult fit_mlp(const std::vector<ChoiceProblem>& problems, const MLPConfig& config = {}, int cv_folds = 10);

}  // namespace evcog
