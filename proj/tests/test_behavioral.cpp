#include <doctest.h>

#include <cmath>

#include "evcog/behavioral.hpp"
#include "evcog/choicesets.hpp"
#include "evcog/errors.hpp"
#include "evcog/metrics.hpp"
#include "evcog/optimize.hpp"

using namespace evcog;

TEST_CASE("prospect theory scalar values") {
  PTParams id{1, 1, 1, 1, 1};
  CHECK(pt_utility(0.0, PTParams{0.5, 0.5, 2, 1, 1}) == 0.0);
  CHECK(pt_utility(-10.0, PTParams{1, 1, 2, 1, 1}) == doctest::Approx(-20.0));
  PTParams fig{0.42, 0.42, 1, 1, 1};
  CHECK(pt_utility(100.0, fig) == doctest::Approx(std::pow(100.0, 0.42)));
  CHECK(pt_utility(100.0, fig) == doctest::Approx(6.92).epsilon(0.001));

  CHECK(pt_weight(0.0, 0.58) == 0.0);
  CHECK(pt_weight(1.0, 0.58) == 1.0);
  const double p = 0.1, g = 0.58;
  const double direct = std::pow(p, g) / std::pow(std::pow(p, g) + std::pow(1 - p, g), 1 / g);
  CHECK(pt_weight(p, g) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(pt_weight(p, g) > 0.1);
  for (int i = 0; i <= 100; ++i) CHECK(pt_weight(i / 100.0, 1.0) == doctest::Approx(i / 100.0).epsilon(1e-14));

  std::vector<Outcome> gamble = {{10, 0.1}, {-12, 0.9}};
  CHECK(pt_option_utility(gamble, id) == doctest::Approx(-9.8));
  CHECK(expected_value(gamble) == doctest::Approx(-9.8));
  std::vector<Outcome> sure = {{37, 1.0}};
  CHECK(pt_option_utility(sure, fig) == doctest::Approx(pt_utility(37, fig)));
  std::vector<Outcome> amb = {{10, std::nullopt}, {0, std::nullopt}};
  CHECK_THROWS_AS(pt_option_utility(amb, id), UnsupportedError);
  CHECK(expected_value(amb) == doctest::Approx(5.0));
}

TEST_CASE("prospect theory shape properties on grids") {
  // The weighting function is monotone only for gamma above about 0.279.
  for (double g = 0.28; g <= 2.0 + 1e-9; g += 0.02) {
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      double w = pt_weight(i / 100.0, g);
      CHECK(w >= prev);
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      prev = w;
    }
  }
  bool monotone = true;
  for (int i = 1; i <= 100; ++i) monotone = monotone && pt_weight(i / 100.0, 0.2) >= pt_weight((i - 1) / 100.0, 0.2);
  CHECK_FALSE(monotone);
  PTParams loss_averse{0.7, 0.8, 2.0, 1.0, 1.0};
  double prev = -1e300;
  for (double x = -300; x <= 300; x += 0.5) {
    double u = pt_utility(x, loss_averse);
    CHECK(u > prev);
    prev = u;
    if (x > 0) CHECK(std::abs(pt_utility(-x, loss_averse)) > pt_utility(x, loss_averse));
  }
}

TEST_CASE("hyperbolic present value identities") {
  CHECK(hyperbolic_pv(100, 0, 0.3) == 100);
  for (int t = 0; t < 50; ++t) CHECK(hyperbolic_pv(42, t, 0.0) == 42);
  CHECK(hyperbolic_pv(100, 10, 0.1) == doctest::Approx(50.0));
  for (double k : {0.01, 0.2, 1.5}) {
    for (int t = 0; t < 100; ++t) CHECK(hyperbolic_pv(80, t + 1, k) < hyperbolic_pv(80, t, k));
  }
}

TEST_CASE("choice rule limits") {
  CHECK(choice_probability(3.0, 0.0) == 1.0);
  CHECK(choice_probability(-3.0, 0.0) == 0.0);
  CHECK(choice_probability(0.0, 0.0) == 0.5);
  CHECK(choice_probability(0.0, 2.0) == 0.5);
  CHECK(choice_probability(50.0, 1e12) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(logistic(-800.0) >= 0.0);
  CHECK(logistic(800.0) == 1.0);
}

TEST_CASE("bounded transform round trip") {
  for (double x : {0.1, 0.5, 1.999, 1.0}) CHECK(to_bounded(from_bounded(x, 0.1, 2.0), 0.1, 2.0) == doctest::Approx(x));
  CHECK(to_bounded(-1e6, 0.0, 5.0) >= 0.0);
  CHECK(to_bounded(1e6, 0.0, 5.0) <= 5.0);
}

TEST_CASE("nelder-mead minimizes a quadratic") {
  auto r = nelder_mead([](const std::vector<double>& x) { return (x[0] - 1) * (x[0] - 1) + 3 * (x[1] + 2) * (x[1] + 2); },
                       {0.0, 0.0});
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(r.x[1] == doctest::Approx(-2.0).epsilon(1e-4));
  CHECK(r.value <= r.start_value);
}

TEST_CASE("binomial NLL") {
  std::vector<double> rates = {0.2, 0.9}, w = {10, 5}, pred = {0.2, 0.9};
  double expected = -10 * (0.2 * std::log(0.2) + 0.8 * std::log(0.8)) - 5 * (0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  CHECK(binomial_nll(rates, w, pred) == doctest::Approx(expected));
  std::vector<double> worse = {0.3, 0.8};
  CHECK(binomial_nll(rates, w, worse) > binomial_nll(rates, w, pred));
}

TEST_CASE("prospect theory parameter recovery on surrogate data") {
  PTParams truth{0.8, 0.8, 2.25, 0.6, 5.0};
  auto data = generate_surrogate(Domain::Risky, 5000, truth, {truth.temperature, 30, 11});
  BehavioralFitOptions opt;
  opt.fixed_temperature = truth.temperature;
  opt.seed = 5;
  auto fit = fit_behavioral(BehavioralModel::PT, data.problems, opt);
  CHECK(std::abs(fit.params["alpha"].get<double>() - truth.alpha) < 0.05);
  CHECK(std::abs(fit.params["beta"].get<double>() - truth.beta) < 0.05);
  CHECK(std::abs(fit.params["gamma"].get<double>() - truth.gamma) < 0.05);
  CHECK(std::abs(fit.params["lambda"].get<double>() - truth.lambda) < 0.05);
  CHECK(fit.n_predictors == 4);
  CHECK(fit.r2_insample > 0.5);
  double nll = fit.diagnostics["nll"].get<double>();
  for (const auto& s : fit.diagnostics["starts"]) CHECK(nll <= s["start_nll"].get<double>() + 1e-9);
}

TEST_CASE("prospect theory fit with free temperature") {
  PTParams truth{0.8, 0.8, 2.25, 0.6, 5.0};
  auto data = generate_surrogate(Domain::Risky, 2000, truth, {truth.temperature, 0, 12});
  // Ambiguous problems are excluded and counted.
  data.problems[0].option_a = {{10, std::nullopt}, {0, std::nullopt}};
  auto fit = fit_behavioral(BehavioralModel::PT, data.problems);
  CHECK(fit.diagnostics["excluded_ambiguous"].get<std::size_t>() == 1);
  CHECK(fit.problem_ids.size() == 1999);
  CHECK(fit.params["temperature"].get<double>() > 0.0);
  CHECK(fit.r2_insample > 0.95);
  CHECK(std::abs(fit.params["gamma"].get<double>() - truth.gamma) < 0.05);
}

TEST_CASE("hyperbolic recovery and domain checks") {
  HyperbolicParams truth{0.05, 2.0};
  auto data = generate_surrogate(Domain::Intertemporal, 3000, truth, {truth.temperature, 0, 13});
  auto fit = fit_behavioral(BehavioralModel::Hyperbolic, data.problems);
  CHECK(std::abs(fit.params["k"].get<double>() - truth.k) < 0.005);
  CHECK(std::abs(fit.params["temperature"].get<double>() - truth.temperature) < 0.05);
  CHECK(fit.r2_insample > 0.99);
  CHECK_THROWS_AS(fit_behavioral(BehavioralModel::PT, data.problems), UsageError);
  auto risky = generate_surrogate(Domain::Risky, 10, PTParams{}, {1.0, 0, 1});
  CHECK_THROWS_AS(fit_behavioral(BehavioralModel::Hyperbolic, risky.problems), UsageError);
}

TEST_CASE("EV-logit properties") {
  auto data = generate_surrogate(Domain::Risky, 1000, PTParams{1, 1, 1, 1, 4.0}, {4.0, 0, 14});
  auto fit = fit_behavioral(BehavioralModel::EVLogit, data.problems);
  CHECK(fit.params["temperature"].get<double>() == doctest::Approx(4.0).epsilon(0.01));
  CHECK(fit.r2_insample > 0.999);
  for (std::size_t i = 0; i < data.problems.size(); ++i) {
    double dv = expected_value(data.problems[i].option_a) - expected_value(data.problems[i].option_b);
    double p = fit.predicted_rates[i];
    if (dv > 0) CHECK(p > 0.5);
    if (dv < 0) CHECK(p < 0.5);
  }
  BehavioralFitOptions hot;
  hot.fixed_temperature = 1e12;
  auto flat = fit_behavioral(BehavioralModel::EVLogit, data.problems, hot);
  for (double p : flat.predicted_rates) CHECK(p == doctest::Approx(0.5).epsilon(1e-6));
  auto days = generate_surrogate(Domain::Intertemporal, 200, HyperbolicParams{0.02, 1.0}, {1.0, 0, 2});
  CHECK_NOTHROW(fit_behavioral(BehavioralModel::EVLogit, days.problems));
}

TEST_CASE("task features layout") {
  ChoiceProblem p;
  p.domain = Domain::Risky;
  p.option_a = {{10, 0.1}, {-12, 0.9}};
  p.option_b = {{3, std::nullopt}};
  auto X = task_features({p});
  REQUIRE(X.cols() == 8);
  CHECK(X(0, 0) == 0.1);
  CHECK(X(0, 1) == 10);
  CHECK(X(0, 2) == 0.9);
  CHECK(X(0, 3) == -12);
  CHECK(X(0, 4) == -1);
  CHECK(X(0, 5) == 3);
  CHECK(X(0, 6) == 0);
  CHECK(X(0, 7) == 0);
  ChoiceProblem q;
  q.domain = Domain::Intertemporal;
  q.option_a = {{20, 1.0, 0, DelayUnit::Day}};
  q.option_b = {{30, 1.0, 7, DelayUnit::Day}};
  auto Y = task_features({q});
  REQUIRE(Y.cols() == 4);
  CHECK(Y(0, 2) == 30);
  CHECK(Y(0, 3) == 7);
  CHECK_THROWS_AS(task_features({p, q}), UsageError);
}

TEST_CASE("MLP on constant and learnable data") {
  auto data = generate_surrogate(Domain::Intertemporal, 400, HyperbolicParams{0.05, 2.0}, {2.0, 0, 15});
  MLPConfig cfg;
  cfg.hidden_units = 16;
  cfg.max_epochs = 400;
  cfg.patience = 50;
  auto constant = data.problems;
  for (auto& p : constant) p.choice_rate_a = 0.3;
  auto c = fit_mlp(constant, cfg, 0);
  for (double v : c.predicted_rates) CHECK(v == doctest::Approx(0.3).epsilon(0.02));
  CHECK(c.r2_insample == doctest::Approx(0.0));

  auto fit = fit_mlp(data.problems, cfg, 5);
  CHECK(fit.r2_insample > 0.8);
  CHECK(fit.has_cv);
  CHECK(fit.r2_cv_folds.size() == 5);
  CHECK(fit.r2_cv_mean > 0.6);
  CHECK(fit.fold_assignments.size() == 400);

  MLPConfig bad = cfg;
  bad.learning_rate = 1e308;
  CHECK_THROWS_AS(fit_mlp(data.problems, bad, 0), FitError);
}

TEST_CASE("metrics helpers") {
  std::vector<double> a = {1, 2, 3, 4}, b = {2, 4, 6, 8}, c = {1, 1, 1, 1};
  CHECK(squared_pearson(a, b) == doctest::Approx(1.0));
  CHECK(squared_pearson(a, c) == 0.0);
  CHECK(adjusted_r2(0.5, 11, 1) == doctest::Approx(1 - 0.5 * 10 / 9));
  auto ms = mean_se(std::vector<double>{1, 3});
  CHECK(ms.mean == 2.0);
  CHECK(ms.se == doctest::Approx(std::sqrt(2.0) / std::sqrt(2.0)));
  auto folds = make_folds(13006, 10, 3);
  std::vector<int> counts(10, 0);
  for (int f : folds) ++counts[f];
  for (int n : counts) CHECK((n == 1300 || n == 1301));
  CHECK(make_folds(100, 10, 3) == make_folds(100, 10, 3));
  std::vector<std::string> groups;
  for (int i = 0; i < 200; ++i) groups.push_back("g" + std::to_string(i % 37));
  auto gf = make_group_folds(groups, 10, 1);
  for (int i = 0; i < 200; ++i) CHECK(gf[i] == gf[i % 37]);
  CHECK(id_set_digest({"a", "b"}) == id_set_digest({"b", "a"}));
  CHECK(id_set_digest({"a", "b"}) != id_set_digest({"a", "c"}));
}
