#include "evcog/utility.hpp"

#include <cmath>

#include "evcog/errors.hpp"

namespace evcog {

void PTParams::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("pt.alpha: must be > 0");
  if (!(beta > 0.0)) throw ConfigError("pt.beta: must be > 0");
  if (!(lambda >= 1.0)) throw ConfigError("pt.lambda: must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("pt.gamma: must be > 0");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("pt.temperature: must be >= 0");
}

void HyperbolicParams::validate() const {
  if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("hyperbolic.k: must be >= 0");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("hyperbolic.temperature: must be >= 0");
  }
}

void to_json(nlohmann::json& j, const PTParams& p) {
  j = {{"alpha", p.alpha}, {"beta", p.beta}, {"lambda", p.lambda}, {"gamma", p.gamma}, {"temperature", p.temperature}};
}

void from_json(const nlohmann::json& j, PTParams& p) {
  p = PTParams{};
  p.alpha = j.value("alpha", p.alpha);
  p.beta = j.value("beta", p.beta);
  p.lambda = j.value("lambda", p.lambda);
  p.gamma = j.value("gamma", p.gamma);
  p.temperature = j.value("temperature", p.temperature);
}

void to_json(nlohmann::json& j, const HyperbolicParams& p) { j = {{"k", p.k}, {"temperature", p.temperature}}; }

void from_json(const nlohmann::json& j, HyperbolicParams& p) {
  p = HyperbolicParams{};
  p.k = j.value("k", p.k);
  p.temperature = j.value("temperature", p.temperature);
}

double pt_utility(double x, const PTParams& params) {
  if (x >= 0.0) return std::pow(x, params.alpha);
  return -params.lambda * std::pow(-x, params.beta);
}

double pt_weight(double p, double gamma) {
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  const double a = std::pow(p, gamma);
  const double b = std::pow(1.0 - p, gamma);
  return a / std::pow(a + b, 1.0 / gamma);
}

double pt_option_utility(std::span<const Outcome> option, const PTParams& params) {
  double u = 0.0;
  for (const auto& o : option) {
    if (o.ambiguous()) throw UnsupportedError("prospect theory has no rule for ambiguous probabilities");
    u += pt_weight(*o.probability, params.gamma) * pt_utility(o.payoff, params);
  }
  return u;
}

double hyperbolic_pv(double x, double t, double k) { return x / (1.0 + k * t); }

double hyperbolic_option_value(std::span<const Outcome> option, double k) {
  double v = 0.0;
  for (const auto& o : option) v += hyperbolic_pv(o.payoff, o.delay, k);
  return v;
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double choice_probability(double value_difference, double temperature) {
  if (temperature == 0.0) {
    if (value_difference > 0.0) return 1.0;
    if (value_difference < 0.0) return 0.0;
    return 0.5;
  }
  return logistic(value_difference / temperature);
}

}  // namespace evcog
