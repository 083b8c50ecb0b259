#include "evcog/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "evcog/errors.hpp"
#include "evcog/random.hpp"
#include "evcog/tokenizer.hpp"
#include "evcog/utility.hpp"

namespace evcog {

std::string to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "equals"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "equals" || s == "last") return Pooling::EqualsToken;
  if (s == "mean") return Pooling::Mean;
  throw UsageError("unknown pooling '" + s + "' (expected equals|mean)");
}

std::string to_string(PenaltyKind k) { return k == PenaltyKind::L1 ? "l1" : "none"; }

PenaltyKind parse_penalty(const std::string& s) {
  if (s == "none") return PenaltyKind::None;
  if (s == "l1") return PenaltyKind::L1;
  throw UsageError("unknown penalty '" + s + "' (expected none|l1)");
}

std::vector<double> ProbeOptions::default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(std::pow(10.0, -4.0 + 4.0 * i / 7.0));
  return grid;
}

Eigen::MatrixXd embed_texts(const Gpt<float>& model, const std::vector<std::string>& texts, Pooling pooling) {
  const auto ctx = static_cast<std::size_t>(model.config().context_length);
  const auto H = model.config().hidden_size;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), H);
  constexpr std::size_t kBatch = 256;
  std::vector<TokenId> tokens;
  std::vector<std::size_t> last;
  for (std::size_t b0 = 0; b0 < texts.size(); b0 += kBatch) {
    const std::size_t nb = std::min(kBatch, texts.size() - b0);
    tokens.clear();
    last.clear();
    for (std::size_t i = 0; i < nb; ++i) {
      const auto& text = texts[b0 + i];
      std::size_t n = token_count(text);
      if (n == 0) throw UsageError("cannot embed an empty expression");
      auto ids = encode(text, Vocabulary::standard(), ctx);
      tokens.insert(tokens.end(), ids.begin(), ids.end());
      last.push_back(n - 1);
    }
    auto fwd = model.forward(tokens, nb);
    for (std::size_t i = 0; i < nb; ++i) {
      const auto base = static_cast<Eigen::Index>(i * ctx);
      const auto row = static_cast<Eigen::Index>(b0 + i);
      if (pooling == Pooling::EqualsToken) {
        out.row(row) = fwd.hidden.row(base + static_cast<Eigen::Index>(last[i])).cast<double>();
      } else {
        out.row(row) =
            fwd.hidden.middleRows(base, static_cast<Eigen::Index>(last[i] + 1)).cast<double>().colwise().mean();
      }
    }
  }
  return out;
}

std::vector<EmbeddingSet> embed_all(const Gpt<float>& model, const std::vector<StylizedProblem>& stylized,
                                    const std::string& checkpoint_hash, Pooling pooling) {
  // Identical expressions share one forward row, so e_a == e_b exactly when
  // the texts match.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> texts;
  auto slot = [&](const std::string& t) {
    if (t.empty() || t.back() != '=') throw UsageError("stylized expression must end with '=': \"" + t + "\"");
    auto [it, inserted] = index.emplace(t, texts.size());
    if (inserted) texts.push_back(t);
    return it->second;
  };
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (const auto& s : stylized) rows.emplace_back(slot(s.expr_a), slot(s.expr_b));
  Eigen::MatrixXd E = embed_texts(model, texts, pooling);
  std::vector<EmbeddingSet> out;
  out.reserve(stylized.size());
  for (std::size_t i = 0; i < stylized.size(); ++i) {
    EmbeddingSet e;
    e.problem_id = stylized[i].problem_id;
    e.source_checkpoint = checkpoint_hash;
    const auto ra = static_cast<Eigen::Index>(rows[i].first);
    const auto rb = static_cast<Eigen::Index>(rows[i].second);
    e.e_a.resize(static_cast<std::size_t>(E.cols()));
    e.e_b.resize(e.e_a.size());
    e.e_diff.resize(e.e_a.size());
    for (Eigen::Index j = 0; j < E.cols(); ++j) {
      const auto k = static_cast<std::size_t>(j);
      e.e_a[k] = E(ra, j);
      e.e_b[k] = E(rb, j);
      e.e_diff[k] = e.e_a[k] - e.e_b[k];
    }
    out.push_back(std::move(e));
  }
  return out;
}

EmbeddingSet embed(const Gpt<float>& model, const StylizedProblem& stylized, const std::string& checkpoint_hash,
                   Pooling pooling) {
  return embed_all(model, {stylized}, checkpoint_hash, pooling).front();
}

// ---------------------------------------------------------------------------

namespace {

struct Standardized {
  Eigen::MatrixXd Z;  // standardized features with a trailing column of ones
  Eigen::RowVectorXd mean, scale;
};

Standardized standardize(const Eigen::MatrixXd& X) {
  Standardized s;
  const auto n = static_cast<double>(X.rows());
  s.mean = X.colwise().mean();
  s.scale = ((X.rowwise() - s.mean).array().square().colwise().sum() / n).sqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  }
  s.Z.resize(X.rows(), X.cols() + 1);
  s.Z.leftCols(X.cols()) = (X.rowwise() - s.mean).array().rowwise() / s.scale.array();
  s.Z.col(X.cols()).setOnes();
  return s;
}

// Mean weighted binomial deviance of rate targets; stable in the linear
// predictor z.
double logistic_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double wsum) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z(i);
    // -[y log s(z) + (1-y) log s(-z)] = log(1 + e^z) - y z
    const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    f += w(i) * (softplus - y(i) * zi);
  }
  return f / wsum;
}

// Residual n * (s(z) - y), computed without cancellation for saturated z.
Eigen::VectorXd residual(const Eigen::VectorXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Eigen::VectorXd r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    r(i) = w(i) * ((1.0 - y(i)) * logistic(z(i)) - y(i) * logistic(-z(i)));
  }
  return r;
}

double l1_norm(const Eigen::VectorXd& theta) { return theta.head(theta.size() - 1).lpNorm<1>(); }

Eigen::VectorXd newton(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double wsum,
                       const ProbeOptions& opt, std::size_t& iterations, double& grad_norm) {
  const Eigen::Index p = Z.cols();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd z = Z * theta;
  double f = logistic_loss(z, y, w, wsum);
  for (iterations = 1; iterations <= opt.newton_max_iterations; ++iterations) {
    Eigen::VectorXd g = Z.transpose() * residual(z, y, w) / wsum;
    grad_norm = g.lpNorm<Eigen::Infinity>();
    Eigen::VectorXd h(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) h(i) = w(i) * logistic(z(i)) * logistic(-z(i));
    Eigen::MatrixXd Hm = Z.transpose() * h.asDiagonal() * Z / wsum;
    const double scale = Hm.diagonal().maxCoeff();
    if (!(scale > 0.0)) break;
    double mu = 1e-8 * scale;
    Eigen::VectorXd step;
    double f_new = f;
    bool accepted = false;
    for (int tries = 0; tries < 8 && !accepted; ++tries, mu *= 100.0) {
      Eigen::MatrixXd damped = Hm;
      damped.diagonal().array() += mu;
      step = damped.ldlt().solve(g);
      double t = 1.0;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        Eigen::VectorXd cand = theta - t * step;
        Eigen::VectorXd zc = Z * cand;
        f_new = logistic_loss(zc, y, w, wsum);
        if (f_new <= f + 1e-4 * t * -g.dot(step) + 1e-15 * std::abs(f)) {
          step *= t;
          theta = cand;
          z = std::move(zc);
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) step.setZero();
    f = f_new;
    const double move = step.lpNorm<Eigen::Infinity>();
    if (grad_norm < opt.tolerance && move < 1e-4 * (1.0 + theta.lpNorm<Eigen::Infinity>())) return theta;
    if (!accepted && grad_norm < opt.tolerance) return theta;
  }
  throw ConvergenceError("logistic probe did not converge in " + std::to_string(opt.newton_max_iterations) +
                         " Newton iterations (gradient norm " + std::to_string(grad_norm) + ", |coef|_inf " +
                         std::to_string(theta.lpNorm<Eigen::Infinity>()) +
                         "); the data may be separable, use an L1 penalty");
}

// Inf-norm of the minimum-norm subgradient of loss + lambda*|theta|_1 (the
// intercept, last, is unpenalized).
double subgradient_norm(const Eigen::VectorXd& g, const Eigen::VectorXd& theta, double lambda) {
  const Eigen::Index p = theta.size();
  double m = std::abs(g(p - 1));
  for (Eigen::Index j = 0; j + 1 < p; ++j) {
    const double v = theta(j) != 0.0 ? std::abs(g(j) + lambda * (theta(j) > 0 ? 1.0 : -1.0))
                                     : std::max(std::abs(g(j)) - lambda, 0.0);
    m = std::max(m, v);
  }
  return m;
}

// Proximal Newton: each outer step minimizes the penalized quadratic model by
// cyclic coordinate descent (full sweeps alternating with active-set sweeps),
// then backtracks on the true objective.
Eigen::VectorXd prox_newton(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                            double wsum, double lambda, Eigen::VectorXd theta, const ProbeOptions& opt,
                            std::size_t& iterations, double& grad_norm) {
  const Eigen::Index n = Z.rows(), p = Z.cols();
  auto objective = [&](const Eigen::VectorXd& z, const Eigen::VectorXd& th) {
    return logistic_loss(z, y, w, wsum) + lambda * l1_norm(th);
  };
  Eigen::VectorXd z = Z * theta;
  double f = objective(z, theta);
  std::size_t sweeps = 0;
  for (iterations = 1; iterations <= opt.newton_max_iterations; ++iterations) {
    const Eigen::VectorXd g = Z.transpose() * residual(z, y, w) / wsum;
    grad_norm = subgradient_norm(g, theta, lambda);
    if (grad_norm < opt.tolerance) return theta;
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) h(i) = w(i) * logistic(z(i)) * logistic(-z(i)) / wsum;
    const Eigen::MatrixXd H = Z.transpose() * h.asDiagonal() * Z;
    const Eigen::VectorXd a = H.diagonal().cwiseMax(1e-12 * std::max(H.diagonal().maxCoeff(), 1e-300));

    Eigen::VectorXd beta = theta;                  // model minimizer, theta + d
    Eigen::VectorXd hd = Eigen::VectorXd::Zero(p);  // H d
    const double inner_tol = std::min(0.1 * opt.tolerance, 0.1 * grad_norm);
    auto sweep = [&](bool active_only) {
      double worst = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (active_only && j + 1 < p && beta(j) == 0.0) continue;
        const double u = beta(j) - (g(j) + hd(j)) / a(j);
        double next = u;
        if (j + 1 < p) {
          const double thr = lambda / a(j);
          next = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
        }
        const double delta = next - beta(j);
        if (delta != 0.0) {
          beta(j) = next;
          hd += delta * H.col(j);
          worst = std::max(worst, std::abs(delta) * a(j));
        }
      }
      ++sweeps;
      return worst;
    };
    // Exact minimizer of the model on the current orthant, truncated where a
    // coefficient would change sign. Returns true when truncated.
    auto orthant_step = [&]() -> bool {
      std::vector<Eigen::Index> act;
      for (Eigen::Index j = 0; j + 1 < p; ++j) {
        if (beta(j) != 0.0) act.push_back(j);
      }
      act.push_back(p - 1);
      const auto m = static_cast<Eigen::Index>(act.size());
      Eigen::MatrixXd Ha(m, m);
      Eigen::VectorXd ga(m);
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto j = act[r];
        ga(r) = g(j) + hd(j) + (j + 1 < p ? lambda * (beta(j) > 0 ? 1.0 : -1.0) : 0.0);
        for (Eigen::Index c = 0; c < m; ++c) Ha(r, c) = H(j, act[c]);
      }
      Ha.diagonal().array() += 1e-10 * Ha.diagonal().maxCoeff();
      const Eigen::VectorXd step = -Ha.ldlt().solve(ga);
      if (!step.allFinite()) return false;
      double tau = 1.0;
      Eigen::Index blocking = -1;
      for (Eigen::Index r = 0; r + 1 < m; ++r) {
        const double b = beta(act[r]), st = step(r);
        if (b * (b + st) < 0.0 && -b / st < tau) {
          tau = -b / st;
          blocking = r;
        }
      }
      for (Eigen::Index r = 0; r < m; ++r) {
        const double delta = r == blocking ? -beta(act[r]) : tau * step(r);
        beta(act[r]) += delta;
        if (r == blocking) beta(act[r]) = 0.0;
        hd += delta * H.col(act[r]);
      }
      return blocking >= 0;
    };
    while (sweeps < opt.l1_max_iterations) {
      if (sweep(false) < inner_tol) break;
      for (Eigen::Index k = 0; k < p && orthant_step(); ++k) {
      }
      while (sweeps < opt.l1_max_iterations && sweep(true) >= inner_tol) {
      }
    }
    const Eigen::VectorXd d = beta - theta;
    const double decrease = g.dot(d) + lambda * (l1_norm(beta) - l1_norm(theta));
    const Eigen::VectorXd zd = Z * d;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      Eigen::VectorXd cand = theta + t * d;
      Eigen::VectorXd zc = z + t * zd;
      const double fc = objective(zc, cand);
      if (fc <= f + 1e-4 * t * decrease + 1e-15 * std::abs(f)) {
        theta = std::move(cand);
        z = std::move(zc);
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted || sweeps >= opt.l1_max_iterations) break;
  }
  const Eigen::VectorXd g = Z.transpose() * residual(z, y, w) / wsum;
  grad_norm = subgradient_norm(g, theta, lambda);
  if (grad_norm < opt.tolerance) return theta;
  throw ConvergenceError("L1 probe did not converge (lambda " + std::to_string(lambda) + ", " +
                         std::to_string(iterations) + " Newton steps, " + std::to_string(sweeps) +
                         " coordinate sweeps, subgradient norm " + std::to_string(grad_norm) + ")");
}

LogisticFit to_original_scale(const Eigen::VectorXd& theta, const Standardized& s) {
  LogisticFit fit;
  const Eigen::Index p = theta.size() - 1;
  fit.coefficients = theta.head(p).array() / s.scale.transpose().array();
  fit.intercept = theta(p) - fit.coefficients.dot(s.mean.transpose());
  return fit;
}

LogisticFit solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& rates, const Eigen::VectorXd& weights,
                  PenaltyKind penalty, double lambda, const ProbeOptions& opt, const Eigen::VectorXd* warm,
                  Eigen::VectorXd* theta_out) {
  if (X.rows() != rates.size() || X.rows() != weights.size()) throw DimensionError("logistic fit: row mismatch");
  Standardized s = standardize(X);
  const double wsum = weights.sum();
  LogisticFit fit;
  Eigen::VectorXd theta;
  if (penalty == PenaltyKind::None) {
    theta = newton(s.Z, rates, weights, wsum, opt, fit.iterations, fit.gradient_norm);
  } else {
    if (!(lambda >= 0.0)) throw ConfigError("probe.lambda: must be >= 0");
    Eigen::VectorXd init = warm ? *warm : Eigen::VectorXd::Zero(s.Z.cols());
    if (!warm) {
      const double mean = std::clamp(rates.dot(weights) / wsum, 1e-6, 1 - 1e-6);
      init(init.size() - 1) = std::log(mean / (1 - mean));
    }
    theta = prox_newton(s.Z, rates, weights, wsum, lambda, init, opt, fit.iterations, fit.gradient_norm);
  }
  LogisticFit out = to_original_scale(theta, s);
  out.iterations = fit.iterations;
  out.gradient_norm = fit.gradient_norm;
  out.lambda = penalty == PenaltyKind::L1 ? lambda : 0.0;
  if (theta_out) *theta_out = theta;
  return out;
}

}  // namespace

LogisticFit fit_fractional_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& rates,
                                    const Eigen::VectorXd& weights, PenaltyKind penalty, double lambda,
                                    const ProbeOptions& options) {
  return solve(X, rates, weights, penalty, lambda, options, nullptr, nullptr);
}

Eigen::VectorXd predict_logistic(const LogisticFit& fit, const Eigen::MatrixXd& X) {
  Eigen::VectorXd z = (X * fit.coefficients).array() + fit.intercept;
  return z.unaryExpr([](double v) { return logistic(v); });
}

namespace {

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd rates, weights;
  std::vector<const ChoiceProblem*> problems;
};

Design build_design(const std::vector<EmbeddingSet>& embeddings, const std::vector<ChoiceProblem>& problems) {
  std::unordered_map<std::string, const EmbeddingSet*> by_id;
  for (const auto& e : embeddings) by_id.emplace(e.problem_id, &e);
  if (problems.empty()) throw TooSmallError("probe: no problems");
  const auto first = by_id.find(problems.front().id);
  if (first == by_id.end()) throw UsageError("probe: no embedding for problem '" + problems.front().id + "'");
  const std::size_t H = first->second->e_a.size();
  Design d;
  d.X.resize(static_cast<Eigen::Index>(problems.size()), static_cast<Eigen::Index>(3 * H));
  d.rates.resize(static_cast<Eigen::Index>(problems.size()));
  d.weights.resize(d.rates.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto it = by_id.find(problems[i].id);
    if (it == by_id.end()) throw UsageError("probe: no embedding for problem '" + problems[i].id + "'");
    const auto& e = *it->second;
    if (e.e_a.size() != H || e.e_b.size() != H || e.e_diff.size() != H) {
      throw DimensionError("probe: embedding dimension mismatch for '" + e.problem_id + "'");
    }
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < H; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      d.X(r, c) = e.e_a[j];
      d.X(r, c + static_cast<Eigen::Index>(H)) = e.e_b[j];
      d.X(r, c + static_cast<Eigen::Index>(2 * H)) = e.e_diff[j];
    }
    if (!d.X.row(r).allFinite()) throw DimensionError("probe: non-finite embedding for '" + e.problem_id + "'");
    d.rates(r) = problems[i].choice_rate_a;
    d.weights(r) = problems[i].n_observations;
    d.problems.push_back(&problems[i]);
  }
  return d;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& X, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
  return out;
}

bool flat(const Eigen::VectorXd& v) { return v.size() == 0 || (v.maxCoeff() - v.minCoeff()) < 1e-15; }

// Fits on the given rows, choosing lambda on an inner split of those rows when
// needed. Returns the fit and a JSON record of the selection.
LogisticFit fit_rows(const Design& d, const std::vector<std::size_t>& rows, const ProbeOptions& opt,
                     std::uint64_t stream, nlohmann::json& info) {
  Eigen::MatrixXd X = rows_of(d.X, rows);
  Eigen::VectorXd y = rows_of(d.rates, rows), w = rows_of(d.weights, rows);
  if (opt.penalty == PenaltyKind::None) return solve(X, y, w, PenaltyKind::None, 0.0, opt, nullptr, nullptr);
  if (opt.lambda) {
    info["lambda"] = *opt.lambda;
    return solve(X, y, w, PenaltyKind::L1, *opt.lambda, opt, nullptr, nullptr);
  }
  if (opt.lambda_grid.empty()) throw ConfigError("probe.lambda_grid: must not be empty");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(opt.seed, 0x1a3b0 + stream);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(opt.inner_validation_fraction * static_cast<double>(rows.size())));
  if (n_val < 2 || n_val + 2 > rows.size()) throw TooSmallError("probe: too few rows for inner lambda selection");
  std::vector<std::size_t> inner_train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> inner_val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  Eigen::MatrixXd Xt = rows_of(X, inner_train), Xv = rows_of(X, inner_val);
  Eigen::VectorXd yt = rows_of(y, inner_train), wt = rows_of(w, inner_train);
  Eigen::VectorXd yv = rows_of(y, inner_val), wv = rows_of(w, inner_val);

  std::vector<double> grid = opt.lambda_grid;
  std::sort(grid.rbegin(), grid.rend());
  double best_lambda = grid.front();
  double best_score = std::numeric_limits<double>::infinity();
  nlohmann::json scores = nlohmann::json::array();
  Eigen::VectorXd warm;
  for (double lambda : grid) {
    Eigen::VectorXd theta;
    LogisticFit f = solve(Xt, yt, wt, PenaltyKind::L1, lambda, opt, warm.size() ? &warm : nullptr, &theta);
    warm = theta;
    Eigen::VectorXd z = (Xv * f.coefficients).array() + f.intercept;
    double dev = logistic_loss(z, yv, wv, wv.sum());
    scores.push_back({{"lambda", lambda}, {"inner_deviance", dev}});
    if (dev < best_score) {
      best_score = dev;
      best_lambda = lambda;
    }
  }
  info["lambda"] = best_lambda;
  info["lambda_scores"] = scores;
  return solve(X, y, w, PenaltyKind::L1, best_lambda, opt, nullptr, nullptr);
}

}  // namespace

FitResult fit_probe(const std::vector<EmbeddingSet>& embeddings, const std::vector<ChoiceProblem>& problems,
                    const ProbeOptions& options) {
  if (problems.size() < 3) throw TooSmallError("probe: need at least 3 problems, got " + std::to_string(problems.size()));
  Design d = build_design(embeddings, problems);
  FitResult r;
  r.model_tag = "probe";
  for (const auto* p : d.problems) {
    r.problem_ids.push_back(p->id);
    r.observed_rates.push_back(p->choice_rate_a);
  }
  r.params = {{"penalty", to_string(options.penalty)}, {"features", d.X.cols()}};
  if (flat(d.rates)) {
    r.predicted_rates.assign(r.observed_rates.size(), d.rates(0));
    r.diagnostics["degenerate"] = "all choice rates are equal";
    return r;
  }
  std::vector<std::size_t> all(problems.size());
  std::iota(all.begin(), all.end(), 0);
  nlohmann::json info = nlohmann::json::object();
  LogisticFit fit = fit_rows(d, all, options, 0, info);
  Eigen::VectorXd pred = predict_logistic(fit, d.X);
  r.predicted_rates.assign(pred.data(), pred.data() + pred.size());
  r.coefficients.assign(fit.coefficients.data(), fit.coefficients.data() + fit.coefficients.size());
  r.coefficients.push_back(fit.intercept);
  r.n_predictors = static_cast<std::size_t>((fit.coefficients.array() != 0.0).count());
  r.r2_insample = squared_pearson(r.predicted_rates, r.observed_rates);
  r.r2_insample_adjusted = adjusted_r2(r.r2_insample, problems.size(), r.n_predictors);
  r.params["lambda"] = fit.lambda;
  r.diagnostics = {{"iterations", fit.iterations}, {"gradient_norm", fit.gradient_norm}, {"selection", info}};
  return r;
}

FitResult cross_validate(const std::vector<EmbeddingSet>& embeddings, const std::vector<ChoiceProblem>& problems,
                         const CvOptions& options) {
  if (options.k < 2) throw ConfigError("cv.k: must be >= 2");
  if (problems.size() < static_cast<std::size_t>(options.k)) throw TooSmallError("cv: fewer problems than folds");
  Design d = build_design(embeddings, problems);
  const std::size_t n = problems.size();
  FitResult r;
  r.model_tag = "probe";
  r.has_cv = true;
  r.params = {{"penalty", to_string(options.probe.penalty)}, {"k", options.k}, {"grouped", options.grouped}};
  for (const auto& p : problems) {
    r.problem_ids.push_back(p.id);
    r.observed_rates.push_back(p.choice_rate_a);
  }
  if (options.grouped) {
    std::vector<std::string> groups;
    for (const auto& p : problems) groups.push_back(p.group.empty() ? p.id : p.group);
    r.fold_assignments = make_group_folds(groups, options.k, options.probe.seed);
  } else {
    r.fold_assignments = make_folds(n, options.k, options.probe.seed);
  }
  r.predicted_rates.assign(n, std::numeric_limits<double>::quiet_NaN());
  nlohmann::json folds = nlohmann::json::array();
  for (int f = 0; f < options.k; ++f) {
    std::vector<std::size_t> train, val;
    std::vector<std::string> train_ids, val_ids;
    for (std::size_t i = 0; i < n; ++i) {
      if (r.fold_assignments[i] == f) {
        val.push_back(i);
        val_ids.push_back(problems[i].id);
      } else {
        train.push_back(i);
        train_ids.push_back(problems[i].id);
      }
    }
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::size_t overlap = 0;
    for (const auto& id : val_ids) overlap += train_set.count(id);
    nlohmann::json fd = {{"fold", f},
                         {"train_rows", train.size()},
                         {"validation_rows", val.size()},
                         {"train_digest", id_set_digest(train_ids)},
                         {"validation_digest", id_set_digest(val_ids)},
                         {"overlap", overlap}};
    if (overlap) throw UsageError("cv: duplicate problem ids across folds (" + std::to_string(overlap) + ")");
    Eigen::VectorXd yv = rows_of(d.rates, val);
    if (flat(yv) || flat(rows_of(d.rates, train))) {
      fd["skipped"] = "zero variance in choice rates";
      folds.push_back(fd);
      continue;
    }
    nlohmann::json info = nlohmann::json::object();
    LogisticFit fit = fit_rows(d, train, options.probe, static_cast<std::uint64_t>(f) + 1, info);
    Eigen::VectorXd pv = predict_logistic(fit, rows_of(d.X, val));
    std::vector<double> pvv(pv.data(), pv.data() + pv.size()), yvv(yv.data(), yv.data() + yv.size());
    for (std::size_t i = 0; i < val.size(); ++i) r.predicted_rates[val[i]] = pvv[i];
    const double r2 = squared_pearson(pvv, yvv);
    fd["r2"] = r2;
    fd["selection"] = info;
    fd["nonzero"] = (fit.coefficients.array() != 0.0).count();
    r.r2_cv_folds.push_back(r2);
    folds.push_back(fd);
  }
  const auto ms = mean_se(r.r2_cv_folds);
  r.r2_cv_mean = ms.mean;
  r.r2_cv_se = ms.se;
  r.diagnostics["folds"] = folds;
  return r;
}

std::vector<EmbeddingSet> import_external_embeddings(const std::filesystem::path& path, std::size_t* dimension) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file '" + path.string() + "'");
  std::vector<EmbeddingSet> out;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> header_dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("problem_id") && j.contains("dimension")) {
      header_dim = j.at("dimension").get<std::size_t>();
      continue;
    }
    EmbeddingSet e;
    try {
      e.problem_id = j.at("problem_id").get<std::string>();
      e.e_a = j.at("e_a").get<std::vector<double>>();
      e.e_b = j.at("e_b").get<std::vector<double>>();
      e.source_checkpoint = j.value("source_checkpoint", std::string("external:") + path.filename().string());
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    if (e.e_a.size() != e.e_b.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": e_a has " + std::to_string(e.e_a.size()) +
                        " values, e_b has " + std::to_string(e.e_b.size()));
    }
    if (!dim) dim = e.e_a.size();
    if (e.e_a.size() != *dim) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": dimension " + std::to_string(e.e_a.size()) +
                        " differs from " + std::to_string(*dim));
    }
    e.e_diff.resize(e.e_a.size());
    for (std::size_t k = 0; k < e.e_a.size(); ++k) e.e_diff[k] = e.e_a[k] - e.e_b[k];
    out.push_back(std::move(e));
  }
  if (header_dim && dim && *header_dim != *dim) {
    throw FormatError(path.string() + ": header dimension " + std::to_string(*header_dim) + " but rows have " +
                      std::to_string(*dim));
  }
  if (dimension) *dimension = dim.value_or(header_dim.value_or(0));
  return out;
}

void write_embeddings_jsonl(const std::vector<EmbeddingSet>& embeddings, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  if (!embeddings.empty()) out << nlohmann::json{{"dimension", embeddings.front().e_a.size()}}.dump() << '\n';
  for (const auto& e : embeddings) {
    out << nlohmann::json{{"problem_id", e.problem_id},
                          {"e_a", e.e_a},
                          {"e_b", e.e_b},
                          {"source_checkpoint", e.source_checkpoint}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace evcog
