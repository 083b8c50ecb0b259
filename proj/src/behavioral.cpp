#include "evcog/behavioral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "evcog/errors.hpp"
#include "evcog/optimize.hpp"
#include "evcog/random.hpp"

namespace evcog {

std::string to_string(BehavioralModel m) {
  switch (m) {
    case BehavioralModel::PT:
      return "pt";
    case BehavioralModel::Hyperbolic:
      return "hyperbolic";
    case BehavioralModel::EVLogit:
      return "ev";
  }
  return "unknown";
}

BehavioralModel parse_behavioral_model(const std::string& s) {
  if (s == "pt") return BehavioralModel::PT;
  if (s == "hyperbolic") return BehavioralModel::Hyperbolic;
  if (s == "ev" || s == "evlogit") return BehavioralModel::EVLogit;
  throw UsageError("unknown behavioral model '" + s + "' (expected pt|hyperbolic|ev|mlp)");
}

double binomial_nll(std::span<const double> rates, std::span<const double> weights, std::span<const double> predicted) {
  constexpr double kEps = 1e-12;
  double nll = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const double p = std::clamp(predicted[i], kEps, 1.0 - kEps);
    nll -= weights[i] * (rates[i] * std::log(p) + (1.0 - rates[i]) * std::log1p(-p));
  }
  return nll;
}

double expected_value(std::span<const Outcome> option, const DiscountBases& bases) {
  double v = 0.0;
  const double uniform = 1.0 / static_cast<double>(option.size());
  for (const auto& o : option) {
    double weight = o.ambiguous() ? uniform : *o.probability;
    if (o.unit != DelayUnit::None) weight *= std::pow(bases.base(o.unit), o.delay);
    v += weight * o.payoff;
  }
  return v;
}

namespace {

struct Param {
  const char* name;
  double lo;
  double hi;
  double init;
};

// Precomputed outcome terms so the objective avoids repeated parsing.
struct PtTerm {
  double p;
  double log_abs_x;  // -inf for x == 0
  bool loss;
};

struct PtProblem {
  std::vector<PtTerm> a, b;
};

double pt_value(const std::vector<PtTerm>& terms, double alpha, double beta, double lambda, double gamma) {
  double u = 0.0;
  for (const auto& t : terms) {
    if (std::isinf(t.log_abs_x)) continue;
    double w = pt_weight(t.p, gamma);
    u += t.loss ? -lambda * w * std::exp(beta * t.log_abs_x) : w * std::exp(alpha * t.log_abs_x);
  }
  return u;
}

std::vector<PtTerm> pt_terms(const std::vector<Outcome>& option) {
  std::vector<PtTerm> out;
  for (const auto& o : option) {
    out.push_back({*o.probability, o.payoff == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(std::abs(o.payoff)),
                   o.payoff < 0.0});
  }
  return out;
}

bool has_ambiguity(const ChoiceProblem& p) {
  auto amb = [](const Outcome& o) { return o.ambiguous(); };
  return std::any_of(p.option_a.begin(), p.option_a.end(), amb) ||
         std::any_of(p.option_b.begin(), p.option_b.end(), amb);
}

double median_abs(std::vector<double> v) {
  for (auto& x : v) x = std::abs(x);
  if (v.empty()) return 1.0;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace

FitResult fit_behavioral(BehavioralModel model, const std::vector<ChoiceProblem>& problems,
                         const BehavioralFitOptions& options) {
  if (options.starts < 1) throw ConfigError("baseline.starts: must be >= 1");
  const FitBounds& B = options.bounds;

  std::vector<const ChoiceProblem*> used;
  std::size_t excluded_ambiguous = 0;
  for (const auto& p : problems) {
    if (model == BehavioralModel::PT && p.domain != Domain::Risky) {
      throw UsageError("prospect theory applies to risky problems only ('" + p.id + "' is intertemporal)");
    }
    if (model == BehavioralModel::Hyperbolic && p.domain != Domain::Intertemporal) {
      throw UsageError("hyperbolic discounting applies to intertemporal problems only ('" + p.id + "' is risky)");
    }
    if (model == BehavioralModel::PT && has_ambiguity(p)) {
      ++excluded_ambiguous;
      continue;
    }
    used.push_back(&p);
  }
  if (used.size() < 2) throw TooSmallError("fit_behavioral: fewer than two usable problems");

  const std::size_t n = used.size();
  std::vector<double> rates(n), weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    rates[i] = used[i]->choice_rate_a;
    weights[i] = used[i]->n_observations;
  }

  std::vector<PtProblem> pt;
  std::vector<double> ev_diff;
  if (model == BehavioralModel::PT) {
    for (auto* p : used) pt.push_back({pt_terms(p->option_a), pt_terms(p->option_b)});
  }
  if (model == BehavioralModel::EVLogit) {
    for (auto* p : used) {
      ev_diff.push_back(expected_value(p->option_a, options.bases) - expected_value(p->option_b, options.bases));
    }
  }

  // Value differences under "neutral" parameters set the temperature scale.
  std::vector<double> neutral;
  for (auto* p : used) {
    neutral.push_back(p->domain == Domain::Risky
                          ? expected_value(p->option_a, options.bases) - expected_value(p->option_b, options.bases)
                          : hyperbolic_option_value(p->option_a, 0.1) - hyperbolic_option_value(p->option_b, 0.1));
  }
  const double t_init = std::clamp(median_abs(neutral), 0.05, 50.0);

  std::vector<Param> params;
  if (model == BehavioralModel::PT) {
    params = {{"alpha", B.alpha_lo, B.alpha_hi, 1.0},
              {"beta", B.beta_lo, B.beta_hi, 1.0},
              {"lambda", B.lambda_lo, B.lambda_hi, 1.5},
              {"gamma", B.gamma_lo, B.gamma_hi, 1.0}};
  } else if (model == BehavioralModel::Hyperbolic) {
    params = {{"k", B.k_lo, B.k_hi, 0.1}};
  }
  const bool fit_temperature = !options.fixed_temperature.has_value();
  if (fit_temperature) params.push_back({"temperature", B.temperature_lo, B.temperature_hi, t_init});
  if (!fit_temperature && !(*options.fixed_temperature > 0.0)) throw ConfigError("fixed temperature must be > 0");

  auto decode = [&](const std::vector<double>& u) {
    std::vector<double> x(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) x[i] = to_bounded(u[i], params[i].lo, params[i].hi);
    return x;
  };
  auto predict = [&](const std::vector<double>& x, std::vector<double>& out) {
    const double temp = fit_temperature ? x.back() : *options.fixed_temperature;
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double dv = 0.0;
      switch (model) {
        case BehavioralModel::PT:
          dv = pt_value(pt[i].a, x[0], x[1], x[2], x[3]) - pt_value(pt[i].b, x[0], x[1], x[2], x[3]);
          break;
        case BehavioralModel::Hyperbolic:
          dv = hyperbolic_option_value(used[i]->option_a, x[0]) - hyperbolic_option_value(used[i]->option_b, x[0]);
          break;
        case BehavioralModel::EVLogit:
          dv = ev_diff[i];
          break;
      }
      out[i] = choice_probability(dv, temp);
    }
  };
  std::vector<double> scratch;
  auto objective = [&](const std::vector<double>& u) {
    predict(decode(u), scratch);
    return binomial_nll(rates, weights, scratch);
  };

  Rng rng = make_rng(options.seed, 0xb3a7);
  nlohmann::json trace = nlohmann::json::array();
  std::optional<NelderMeadResult> best;
  NelderMeadOptions nm;
  nm.max_iterations = options.max_iterations;
  nm.size_tolerance = 1e-7;
  for (int s = 0; s < options.starts; ++s) {
    std::vector<double> x0(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      double span = p.hi - p.lo;
      double x = s == 0 ? p.init : p.lo + span * (0.05 + 0.9 * uniform01(rng));
      if (std::string(p.name) == "temperature" && s > 0) x = t_init * std::exp(std::log(8.0) * (2 * uniform01(rng) - 1));
      x0[i] = from_bounded(std::clamp(x, p.lo + 1e-6 * span, p.hi - 1e-6 * span), p.lo, p.hi);
    }
    if (params.empty()) break;
    auto r = nelder_mead(objective, x0, nm);
    trace.push_back({{"start", decode(x0)},
                     {"start_nll", r.start_value},
                     {"nll", r.value},
                     {"converged", r.converged},
                     {"iterations", r.iterations}});
    if (!std::isfinite(r.value) || r.value >= std::numeric_limits<double>::max()) continue;
    if (!best || r.value < best->value) best = r;
  }

  std::vector<double> x;
  if (params.empty()) {
    x = {};
  } else {
    if (!best) throw FitError(to_string(model) + " fit failed from every start: " + trace.dump());
    x = decode(best->x);
  }

  FitResult result;
  result.model_tag = to_string(model);
  predict(x, result.predicted_rates);
  for (auto* p : used) {
    result.problem_ids.push_back(p->id);
    result.observed_rates.push_back(p->choice_rate_a);
  }
  for (std::size_t i = 0; i < params.size(); ++i) result.params[params[i].name] = x[i];
  if (!fit_temperature) result.params["temperature"] = *options.fixed_temperature;
  result.n_predictors = params.size();
  result.r2_insample = squared_pearson(result.predicted_rates, result.observed_rates);
  result.r2_insample_adjusted = adjusted_r2(result.r2_insample, n, result.n_predictors);
  result.diagnostics = {{"starts", trace},
                        {"nll", binomial_nll(rates, weights, result.predicted_rates)},
                        {"excluded_ambiguous", excluded_ambiguous},
                        {"any_converged", std::any_of(trace.begin(), trace.end(),
                                                      [](const nlohmann::json& t) { return t.at("converged").get<bool>(); })}};
  return result;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd task_features(const std::vector<ChoiceProblem>& problems) {
  if (problems.empty()) return {};
  const Domain domain = problems.front().domain;
  const Eigen::Index cols = domain == Domain::Risky ? 8 : 4;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(problems.size()), cols);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    if (p.domain != domain) throw UsageError("task_features: mixed risky and intertemporal problems");
    const auto r = static_cast<Eigen::Index>(i);
    Eigen::Index c = 0;
    for (const auto* opt : {&p.option_a, &p.option_b}) {
      if (domain == Domain::Risky) {
        if (opt->size() > 2) throw UnsupportedError("task_features: more than two outcomes in '" + p.id + "'");
        for (std::size_t k = 0; k < 2; ++k, c += 2) {
          if (k >= opt->size()) continue;
          const auto& o = (*opt)[k];
          X(r, c) = o.ambiguous() ? -1.0 : *o.probability;
          X(r, c + 1) = o.payoff;
        }
      } else {
        X(r, c) = opt->front().payoff;
        X(r, c + 1) = opt->front().delay;
        c += 2;
      }
    }
  }
  return X;
}

namespace {

struct Mlp {
  Eigen::MatrixXd W1;
  Eigen::RowVectorXd b1;
  Eigen::VectorXd W2;
  double b2 = 0.0;
};

Eigen::VectorXd mlp_predict(const Mlp& m, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd h = ((X * m.W1).rowwise() + m.b1).unaryExpr([](double v) { return logistic(v); });
  Eigen::VectorXd z = (h * m.W2).array() + m.b2;
  return z.unaryExpr([](double v) { return logistic(v); });
}

struct Standardizer {
  Eigen::RowVectorXd mean, scale;
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean).array().rowwise() / scale.array();
  }
};

Standardizer fit_standardizer(const Eigen::MatrixXd& X) {
  Standardizer s;
  s.mean = X.colwise().mean();
  Eigen::MatrixXd c = X.rowwise() - s.mean;
  s.scale = (c.array().square().colwise().sum() / std::max<double>(1.0, static_cast<double>(X.rows()))).sqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (s.scale(j) < 1e-12) s.scale(j) = 1.0;
  }
  return s;
}

// Trains on rows `train` of (X, y) with early stopping on an internal holdout
// and returns predictions for `predict_rows`.
Eigen::VectorXd train_mlp(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y, const std::vector<std::size_t>& train,
                          const Eigen::MatrixXd& X_eval_raw, const MLPConfig& cfg, std::uint64_t stream,
                          nlohmann::json& diag) {
  Rng rng = make_rng(cfg.seed, stream);
  std::vector<std::size_t> order = train;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(order.size())));
  if (order.size() >= 10) n_hold = std::max<std::size_t>(n_hold, 1);
  else n_hold = 0;
  std::vector<std::size_t> fit_rows(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> hold_rows(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());

  auto gather = [&](const std::vector<std::size_t>& rows, Eigen::MatrixXd& Xo, Eigen::VectorXd& yo) {
    Xo.resize(static_cast<Eigen::Index>(rows.size()), X_raw.cols());
    yo.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Xo.row(static_cast<Eigen::Index>(i)) = X_raw.row(static_cast<Eigen::Index>(rows[i]));
      yo(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
    }
  };
  Eigen::MatrixXd Xf, Xh;
  Eigen::VectorXd yf, yh;
  gather(fit_rows, Xf, yf);
  gather(hold_rows, Xh, yh);
  Standardizer stdz = fit_standardizer(Xf);
  Xf = stdz.apply(Xf);
  if (n_hold) Xh = stdz.apply(Xh);

  const Eigen::Index F = Xf.cols();
  const Eigen::Index H = cfg.hidden_units;
  std::normal_distribution<double> nd(0.0, 1.0);
  Mlp m;
  m.W1 = Eigen::MatrixXd::NullaryExpr(F, H, [&] { return nd(rng) / std::sqrt(static_cast<double>(F)); });
  m.b1 = Eigen::RowVectorXd::Zero(H);
  m.W2 = Eigen::VectorXd::NullaryExpr(H, [&] { return nd(rng) / std::sqrt(static_cast<double>(H)); });
  double ymean = yf.mean();
  m.b2 = std::log(std::clamp(ymean, 1e-3, 1 - 1e-3) / (1 - std::clamp(ymean, 1e-3, 1 - 1e-3)));

  // Adam state.
  Mlp mom{Eigen::MatrixXd::Zero(F, H), Eigen::RowVectorXd::Zero(H), Eigen::VectorXd::Zero(H), 0.0};
  Mlp vel = mom;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = cfg.learning_rate;
  Mlp best = m;
  double best_hold = std::numeric_limits<double>::infinity();
  std::size_t since = 0, epochs = 0;
  const double nf = static_cast<double>(Xf.rows());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    epochs = epoch;
    Eigen::MatrixXd h = ((Xf * m.W1).rowwise() + m.b1).unaryExpr([](double v) { return logistic(v); });
    Eigen::VectorXd out = ((h * m.W2).array() + m.b2).unaryExpr([](double v) { return logistic(v); });
    Eigen::VectorXd err = out - yf;
    double loss = err.squaredNorm() / nf;
    if (!std::isfinite(loss) || !m.W1.allFinite() || !m.W2.allFinite()) {
      throw FitError("MLP training diverged at epoch " + std::to_string(epoch) + "; lower learning_rate (currently " +
                     std::to_string(lr) + ")");
    }
    Eigen::VectorXd dz = (2.0 / nf) * err.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
    Eigen::VectorXd gW2 = h.transpose() * dz;
    double gb2 = dz.sum();
    Eigen::MatrixXd dh = (dz * m.W2.transpose()).cwiseProduct(h.cwiseProduct((1.0 - h.array()).matrix()));
    Eigen::MatrixXd gW1 = Xf.transpose() * dh;
    Eigen::RowVectorXd gb1 = dh.colwise().sum();

    const double c1 = 1.0 - std::pow(b1, static_cast<double>(epoch));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(epoch));
    auto adam = [&](auto& param, auto& mo, auto& ve, const auto& g) {
      mo = b1 * mo + (1 - b1) * g;
      ve = b2 * ve + (1 - b2) * g.cwiseProduct(g);
      param -= (lr * (mo / c1).array() / ((ve / c2).array().sqrt() + eps)).matrix();
    };
    adam(m.W1, mom.W1, vel.W1, gW1);
    adam(m.b1, mom.b1, vel.b1, gb1);
    adam(m.W2, mom.W2, vel.W2, gW2);
    mom.b2 = b1 * mom.b2 + (1 - b1) * gb2;
    vel.b2 = b2 * vel.b2 + (1 - b2) * gb2 * gb2;
    m.b2 -= lr * (mom.b2 / c1) / (std::sqrt(vel.b2 / c2) + eps);

    if (n_hold == 0) {
      best = m;
      continue;
    }
    double hold = (mlp_predict(m, Xh) - yh).squaredNorm() / static_cast<double>(n_hold);
    if (hold < best_hold - 1e-9) {
      best_hold = hold;
      best = m;
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  diag = {{"epochs", epochs}, {"holdout_mse", n_hold ? best_hold : 0.0}, {"holdout_rows", n_hold}};
  return mlp_predict(best, stdz.apply(X_eval_raw));
}

}  // namespace

FitResult fit_mlp(const std::vector<ChoiceProblem>& problems, const MLPConfig& config, int cv_folds) {
  if (problems.size() < 2) throw TooSmallError("fit_mlp: fewer than two problems");
  if (config.hidden_units < 1) throw ConfigError("mlp.hidden_units: must be >= 1");
  if (!(config.learning_rate > 0.0)) throw ConfigError("mlp.learning_rate: must be > 0");
  const Eigen::MatrixXd X = task_features(problems);
  const auto n = problems.size();
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = problems[i].choice_rate_a;

  FitResult result;
  result.model_tag = "mlp";
  for (const auto& p : problems) {
    result.problem_ids.push_back(p.id);
    result.observed_rates.push_back(p.choice_rate_a);
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  nlohmann::json diag;
  Eigen::VectorXd pred = train_mlp(X, y, all, X, config, 0, diag);
  result.predicted_rates.assign(pred.data(), pred.data() + pred.size());
  result.r2_insample = squared_pearson(result.predicted_rates, result.observed_rates);
  const std::size_t F = static_cast<std::size_t>(X.cols());
  const std::size_t H = static_cast<std::size_t>(config.hidden_units);
  result.n_predictors = F * H + 2 * H + 1;
  result.r2_insample_adjusted = adjusted_r2(result.r2_insample, n, result.n_predictors);
  result.params = {{"hidden_units", config.hidden_units}, {"learning_rate", config.learning_rate}};
  result.diagnostics["insample"] = diag;

  if (cv_folds > 1) {
    std::vector<std::string> groups;
    for (const auto& p : problems) groups.push_back(p.group.empty() ? p.id : p.group);
    result.fold_assignments = make_group_folds(groups, cv_folds, config.seed);
    nlohmann::json folds = nlohmann::json::array();
    for (int f = 0; f < cv_folds; ++f) {
      std::vector<std::size_t> train, val;
      for (std::size_t i = 0; i < n; ++i) (result.fold_assignments[i] == f ? val : train).push_back(i);
      Eigen::MatrixXd Xv(static_cast<Eigen::Index>(val.size()), X.cols());
      std::vector<double> yv;
      for (std::size_t i = 0; i < val.size(); ++i) {
        Xv.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(val[i]));
        yv.push_back(problems[val[i]].choice_rate_a);
      }
      nlohmann::json fd;
      Eigen::VectorXd pv = train_mlp(X, y, train, Xv, config, 1000 + static_cast<std::uint64_t>(f), fd);
      fd["fold"] = f;
      fd["validation_rows"] = val.size();
      double mean = std::accumulate(yv.begin(), yv.end(), 0.0) / static_cast<double>(yv.size());
      bool flat = std::all_of(yv.begin(), yv.end(), [&](double v) { return std::abs(v - mean) < 1e-15; });
      if (flat) {
        fd["skipped"] = "zero variance in validation rates";
      } else {
        std::vector<double> pvv(pv.data(), pv.data() + pv.size());
        double r2 = squared_pearson(pvv, yv);
        fd["r2"] = r2;
        result.r2_cv_folds.push_back(r2);
      }
      folds.push_back(fd);
    }
    auto ms = mean_se(result.r2_cv_folds);
    result.has_cv = !result.r2_cv_folds.empty();
    result.r2_cv_mean = ms.mean;
    result.r2_cv_se = ms.se;
    result.diagnostics["folds"] = folds;
  }
  return result;
}

}  // namespace evcog
