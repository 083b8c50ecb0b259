#pragma once

#include <span>
#include <variant>

#include <nlohmann/json.hpp>

#include "evcog/problem.hpp"

namespace evcog {

struct PTParams {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  double gamma = 1.0;
  double temperature = 1.0;

  void validate() const;
};

struct HyperbolicParams {
  double k = 0.0;
  double temperature = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PTParams& p);
void from_json(const nlohmann::json& j, PTParams& p);
void to_json(nlohmann::json& j, const HyperbolicParams& p);
void from_json(const nlohmann::json& j, HyperbolicParams& p);

// x >= 0: x^alpha; x < 0: -lambda * (-x)^beta.
double pt_utility(double x, const PTParams& params);
// p^g / (p^g + (1-p)^g)^(1/g); exact at the endpoints.
double pt_weight(double p, double gamma);
// Sum of w(p_i) U(x_i). Throws UnsupportedError on ambiguous outcomes.
double pt_option_utility(std::span<const Outcome> option, const PTParams& params);

double hyperbolic_pv(double x, double t, double k);
inline double hyperbolic_pv(double x, double t, const HyperbolicParams& p) { return hyperbolic_pv(x, t, p.k); }
// Sum of hyperbolic present values of an intertemporal option.
double hyperbolic_option_value(std::span<const Outcome> option, double k);

// Numerically stable 1 / (1 + exp(-z)).
double logistic(double z);

// Choice rule shared by every behavioral model: P(A) = logistic(dv / temperature).
// A zero temperature gives the deterministic limit (0, 1/2 or 1).
double choice_probability(double value_difference, double temperature);

}  // namespace evcog
