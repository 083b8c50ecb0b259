#include "evcog/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "csv.hpp"
#include "evcog/checkpoint.hpp"
#include "evcog/errors.hpp"
#include "evcog/optimize.hpp"
#include "evcog/random.hpp"
#include "evcog/tokenizer.hpp"
#include "evcog/utility.hpp"

namespace evcog {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (points.row(i) - points.row(j)).norm();
    }
  }
  return d;
}

namespace {

double stress_of(const Eigen::MatrixXd& d, const std::vector<double>& x) {
  double s = 0.0;
  const auto n = static_cast<Eigen::Index>(x.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r = std::abs(x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)]) - d(i, j);
      s += r * r;
    }
  }
  return s;
}

// One Guttman transform. In one dimension it reduces to
// x_i = (1/n) sum_j d_ij sign(x_i - x_j).
std::vector<double> guttman(const Eigen::MatrixXd& d, const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = x[i] - x[j];
      if (diff > 0) acc += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      else if (diff < 0) acc -= d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

std::vector<double> classical_init(const Eigen::MatrixXd& d) {
  const Eigen::Index n = d.rows();
  Eigen::MatrixXd sq = d.array().square();
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  Eigen::MatrixXd B = -0.5 * J * sq * J;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const double lam = std::max(0.0, es.eigenvalues()(n - 1));
  Eigen::VectorXd v = es.eigenvectors().col(n - 1) * std::sqrt(lam);
  return {v.data(), v.data() + v.size()};
}

}  // namespace

MdsResult mds_1d(const Eigen::MatrixXd& distances, const MdsOptions& options) {
  const auto n = static_cast<std::size_t>(distances.rows());
  if (distances.rows() != distances.cols()) throw DimensionError("mds: distance matrix must be square");
  if (options.restarts < 1) throw ConfigError("mds.restarts: must be >= 1");
  MdsResult best;
  best.stress = std::numeric_limits<double>::infinity();
  if (n < 2) {
    best.coordinates.assign(n, 0.0);
    best.stress = 0.0;
    best.converged = true;
    return best;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      total += v * v;
    }
  }
  const double spread = std::sqrt(total / (0.5 * static_cast<double>(n * (n - 1))));
  Rng rng = make_rng(options.seed, 0x3d5);
  std::normal_distribution<double> nd(0.0, spread);
  std::vector<double> last_trace;
  bool any_converged = false;
  for (int r = 0; r < options.restarts; ++r) {
    std::vector<double> x;
    if (r == 0) {
      x = classical_init(distances);
    } else {
      x.resize(n);
      for (auto& v : x) v = nd(rng);
    }
    double s = stress_of(distances, x);
    std::vector<double> trace{s};
    bool converged = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      auto next = guttman(distances, x);
      const double s_next = stress_of(distances, next);
      trace.push_back(s_next);
      x = std::move(next);
      const double drop = s - s_next;
      s = s_next;
      if (drop <= options.tolerance * std::max(s, 1e-300) || s <= 1e-30 * total) {
        converged = true;
        break;
      }
    }
    last_trace = trace;
    any_converged = any_converged || converged;
    if (converged && s < best.stress) {
      best.coordinates = x;
      best.stress = s;
      best.stress_trace = trace;
      best.converged = true;
    }
  }
  if (!any_converged) {
    std::ostringstream msg;
    msg << "mds did not converge in " << options.max_iterations << " iterations; stress trace of the last restart:";
    for (std::size_t i = 0; i < last_trace.size(); i += std::max<std::size_t>(1, last_trace.size() / 20)) {
      msg << ' ' << last_trace[i];
    }
    throw ConvergenceError(msg.str());
  }
  best.normalized_stress = total > 0 ? std::sqrt(best.stress / total) : 0.0;
  return best;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (!(range > 0.0)) return out;
  const double base = *lo;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - base) / range;
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(CurveKind k) {
  switch (k) {
    case CurveKind::Probability:
      return "probability";
    case CurveKind::Value:
      return "value";
    case CurveKind::Discount:
      return "discount";
  }
  return "unknown";
}

CurveKind parse_curve_kind(const std::string& s) {
  if (s == "probability") return CurveKind::Probability;
  if (s == "value") return CurveKind::Value;
  if (s == "discount") return CurveKind::Discount;
  throw UsageError("unknown curve kind '" + s + "' (expected probability|value|discount)");
}

std::vector<int> discount_delays() {
  std::vector<int> t;
  for (int i = 30; i >= 0; --i) t.push_back(i);
  return t;
}

std::vector<double> curve_grid(CurveKind kind) {
  std::vector<double> g;
  switch (kind) {
    case CurveKind::Probability:
      for (int i = 0; i <= 100; ++i) g.push_back(i / 100.0);
      break;
    case CurveKind::Value:
      for (int v = -300; v <= 300; ++v) g.push_back(v);
      break;
    case CurveKind::Discount:
      for (int t : discount_delays()) g.push_back(std::pow(0.99, t));
      break;
  }
  return g;
}

std::string curve_input_text(CurveKind kind, double x) {
  switch (kind) {
    case CurveKind::Probability:
      return Decimal2::from_double(x).magnitude_string();
    case CurveKind::Value: {
      auto d = Decimal2::from_double(x);
      return (d.cents < 0 ? "-" : "") + d.magnitude_string();
    }
    case CurveKind::Discount: {
      const long t = std::lround(std::log(x) / std::log(0.99));
      return "0.99^" + std::to_string(t);
    }
  }
  return {};
}

std::string ImplicitCurve::to_csv() const {
  std::ostringstream out;
  out << "input,raw_1d,normalized_1d\n";
  out.precision(17);
  for (std::size_t i = 0; i < input_grid.size(); ++i) {
    out << input_grid[i] << ',' << raw_1d[i] << ',' << embedding_1d[i] << '\n';
  }
  return out.str();
}

ImplicitCurve implicit_curve_from_embeddings(CurveKind kind, const Eigen::MatrixXd& embeddings,
                                             const MdsOptions& options) {
  ImplicitCurve c;
  c.kind = kind;
  c.input_grid = curve_grid(kind);
  if (static_cast<std::size_t>(embeddings.rows()) != c.input_grid.size()) {
    throw DimensionError("implicit curve: expected " + std::to_string(c.input_grid.size()) + " embeddings, got " +
                         std::to_string(embeddings.rows()));
  }
  if (!embeddings.allFinite()) throw DimensionError("implicit curve: non-finite embeddings");
  auto mds = mds_1d(pairwise_distances(embeddings), options);
  c.raw_1d = mds.coordinates;
  if (c.raw_1d.back() < c.raw_1d.front()) {
    for (auto& v : c.raw_1d) v = -v;
  }
  c.stress = mds.normalized_stress;
  c.embedding_1d = kind == CurveKind::Value ? c.raw_1d : minmax_normalize(c.raw_1d);
  return c;
}

ImplicitCurve implicit_curve(const Gpt<float>& model, CurveKind kind, const MdsOptions& options) {
  std::vector<std::string> texts;
  for (double x : curve_grid(kind)) texts.push_back(curve_input_text(kind, x));
  return implicit_curve_from_embeddings(kind, embed_texts(model, texts, Pooling::EqualsToken), options);
}

namespace {

struct CurveParam {
  const char* name;
  double lo, hi;
};

nlohmann::json fit_curve(const std::vector<CurveParam>& params, const std::function<double(const std::vector<double>&)>& sse,
                         double sst, std::uint64_t seed) {
  auto decode = [&](const std::vector<double>& u) {
    std::vector<double> x(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) x[i] = to_bounded(u[i], params[i].lo, params[i].hi);
    return x;
  };
  Rng rng = make_rng(seed, 0xc0e);
  std::optional<NelderMeadResult> best;
  for (int s = 0; s < 8; ++s) {
    std::vector<double> u0(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double span = params[i].hi - params[i].lo;
      const double frac = s == 0 ? 0.5 : 0.05 + 0.9 * uniform01(rng);
      u0[i] = from_bounded(params[i].lo + frac * span, params[i].lo, params[i].hi);
    }
    NelderMeadOptions nm;
    nm.size_tolerance = 1e-10;
    auto r = nelder_mead([&](const std::vector<double>& u) { return sse(decode(u)); }, u0, nm);
    if (std::isfinite(r.value) && (!best || r.value < best->value)) best = r;
  }
  if (!best || !(best->value < std::numeric_limits<double>::max())) {
    throw FitError("implicit-curve fit failed from every start");
  }
  auto x = decode(best->x);
  nlohmann::json out;
  for (std::size_t i = 0; i < params.size(); ++i) out[params[i].name] = x[i];
  out["sse"] = best->value;
  out["r2"] = sst > 0 ? 1.0 - best->value / sst : 0.0;
  return out;
}

double sum_sq_dev(const std::vector<double>& y) {
  const double m = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double s = 0.0;
  for (double v : y) s += (v - m) * (v - m);
  return s;
}

double normalized_hyperbolic(int t, double k) {
  const double tail = 1.0 / (1.0 + 30.0 * k);
  return (1.0 / (1.0 + k * t) - tail) / (1.0 - tail);
}

}  // namespace

nlohmann::json fit_implicit(const ImplicitCurve& curve, std::uint64_t seed) {
  const auto& x = curve.input_grid;
  const auto& y = curve.embedding_1d;
  if (x.size() != y.size() || x.empty()) throw DimensionError("fit_implicit: grid and curve lengths differ");
  for (double v : y) {
    if (!std::isfinite(v)) throw FitError("fit_implicit: curve has non-finite values");
  }
  nlohmann::json out;
  switch (curve.kind) {
    case CurveKind::Probability: {
      auto sse = [&](const std::vector<double>& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(y[i] - pt_weight(x[i], p[0]), 2);
        return s;
      };
      out = fit_curve({{"gamma", 0.05, 5.0}}, sse, sum_sq_dev(y), seed);
      break;
    }
    case CurveKind::Discount: {
      const auto t = discount_delays();
      auto sse = [&](const std::vector<double>& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(y[i] - normalized_hyperbolic(t[i], p[0]), 2);
        return s;
      };
      out = fit_curve({{"k", 1e-6, 10.0}}, sse, sum_sq_dev(y), seed);
      break;
    }
    case CurveKind::Value: {
      auto zero = std::find(x.begin(), x.end(), 0.0);
      if (zero == x.end()) throw FitError("fit_implicit: value grid has no zero point");
      const double anchor = y[static_cast<std::size_t>(zero - x.begin())];
      std::vector<double> ya(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) ya[i] = y[i] - anchor;
      auto scale_for = [&](const std::vector<double>& p) {
        PTParams pt{p[0], p[1], p[2], 1.0, 1.0};
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double u = pt_utility(x[i], pt);
          num += ya[i] * u;
          den += u * u;
        }
        return den > 0 ? std::max(0.0, num / den) : 0.0;
      };
      auto sse = [&](const std::vector<double>& p) {
        PTParams pt{p[0], p[1], p[2], 1.0, 1.0};
        const double s = scale_for(p);
        double e = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) e += std::pow(ya[i] - s * pt_utility(x[i], pt), 2);
        return e;
      };
      out = fit_curve({{"alpha", 0.1, 2.0}, {"beta", 0.1, 2.0}, {"lambda", 0.1, 10.0}}, sse, sum_sq_dev(ya), seed);
      out["scale"] = scale_for({out["alpha"].get<double>(), out["beta"].get<double>(), out["lambda"].get<double>()});
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json AccuracyReport::to_json() const {
  return {{"test_dist", test_dist},
          {"n_test", n_test},
          {"correct_probability", correct_probability},
          {"correct_probability_se", correct_probability_se},
          {"integer_match_rate", integer_match_rate}};
}

AccuracyReport arithmetic_accuracy(const Gpt<float>& model, const std::vector<std::string>& lines,
                                   const std::string& test_dist) {
  const auto& vocab = Vocabulary::standard();
  const auto ctx = static_cast<std::size_t>(model.config().context_length);
  std::vector<std::vector<TokenId>> prefixes, continuations;
  std::vector<double> truths;
  for (const auto& line : lines) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("accuracy: line without '=': \"" + line + "\"");
    auto truth = parse_result(line.substr(eq + 1));
    if (!truth) throw FormatError("accuracy: line without a result: \"" + line + "\"");
    auto prefix = tokenize(line.substr(0, eq + 1), vocab);
    auto cont = tokenize(line.substr(eq + 1), vocab);
    if (prefix.size() + cont.size() < ctx) cont.push_back(vocab.pad_id());
    prefixes.push_back(std::move(prefix));
    continuations.push_back(std::move(cont));
    truths.push_back(*truth);
  }
  AccuracyReport rep;
  rep.test_dist = test_dist;
  rep.n_test = lines.size();
  if (lines.empty()) return rep;
  auto lp = sequence_log_probs(model, prefixes, continuations);
  std::vector<double> probs(lp.size());
  std::transform(lp.begin(), lp.end(), probs.begin(), [](double v) { return std::exp(v); });
  auto ms = mean_se(probs);
  rep.correct_probability = ms.mean;
  rep.correct_probability_se = ms.se;
  auto generated = greedy_generate_batch(model, prefixes, vocab.pad_id());
  std::size_t matches = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    auto v = parse_result(decode(generated[i], vocab));
    if (v && std::trunc(*v) == std::trunc(truths[i])) ++matches;
  }
  rep.integer_match_rate = static_cast<double>(matches) / static_cast<double>(lines.size());
  return rep;
}

AccuracyReport arithmetic_accuracy(const Gpt<float>& model, const DistSpec& spec, const std::string& test_dist,
                                   std::size_t n_test, std::uint64_t seed) {
  DistSpec test = spec;
  test.sign_ablation = false;
  test.remove_answers = false;
  auto corpus = generate_corpus(test, n_test, seed, static_cast<std::size_t>(model.config().context_length));
  std::vector<std::string> lines;
  lines.reserve(corpus.records.size());
  for (const auto& r : corpus.records) lines.push_back(r.rendered);
  return arithmetic_accuracy(model, lines, test_dist);
}

// ---------------------------------------------------------------------------

std::string SweepCell::label() const {
  std::ostringstream s;
  s << "h" << hidden_size << "_n" << n_equations << "_beta" << prob_dist.a << "-" << prob_dist.b << "_exp"
    << value_exponent;
  return s.str();
}

std::vector<SweepCell> SweepGrid::cells() const {
  std::vector<SweepCell> out;
  for (int h : hidden_sizes) {
    for (auto n : data_quantities) {
      for (const auto& p : prob_dists) {
        for (double e : value_exponents) out.push_back({h, n, p, e});
      }
    }
  }
  return out;
}

SweepGrid SweepGrid::size_by_quantity() {
  return {{320, 104, 16}, {1000000, 100000, 10000}, {BetaDist{0.27, 0.27}}, {-0.945}};
}

SweepGrid SweepGrid::distribution_grid() {
  return {{320}, {1000000}, {BetaDist{0.27, 0.27}, BetaDist{1, 1}, BetaDist{2, 2}}, {0.0, -0.945, -2.0}};
}

std::string SweepTable::to_csv() const {
  std::ostringstream out;
  out << "cell,dataset,status,r2_cv_mean,r2_cv_se\n";
  char buf[64];
  for (const auto& r : rows) {
    out << csv::quote(r.cell) << ',' << csv::quote(r.dataset) << ',' << csv::quote(r.status) << ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.r2_cv_mean, r.r2_cv_se);
    out << buf << '\n';
  }
  return out.str();
}

std::string SweepTable::to_text() const {
  std::size_t wc = 4, wd = 7;
  for (const auto& r : rows) {
    wc = std::max(wc, r.cell.size());
    wd = std::max(wd, r.dataset.size());
  }
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-*s  %s\n", static_cast<int>(wc), "cell", static_cast<int>(wd), "dataset",
                "CV R2 % (SE)");
  out << buf;
  for (const auto& r : rows) {
    if (r.status == "ok") {
      std::snprintf(buf, sizeof buf, "%-*s  %-*s  %.1f (%.1f)\n", static_cast<int>(wc), r.cell.c_str(),
                    static_cast<int>(wd), r.dataset.c_str(), 100 * r.r2_cv_mean, 100 * r.r2_cv_se);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  %-*s  %s\n", static_cast<int>(wc), r.cell.c_str(), static_cast<int>(wd),
                    r.dataset.c_str(), r.status.c_str());
    }
    out << buf;
  }
  return out.str();
}

namespace {

nlohmann::json row_json(const SweepRow& r) {
  return {{"cell", r.cell}, {"dataset", r.dataset}, {"status", r.status}, {"r2_cv_mean", r.r2_cv_mean},
          {"r2_cv_se", r.r2_cv_se}};
}

SweepRow row_from(const nlohmann::json& j) {
  return {j.at("cell").get<std::string>(), j.at("dataset").get<std::string>(), j.at("status").get<std::string>(),
          j.at("r2_cv_mean").get<double>(), j.at("r2_cv_se").get<double>()};
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

SweepTable run_sweep(const SweepGrid& grid, const SweepConfig& config, const std::filesystem::path& out_dir,
                     const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  SweepTable table;
  std::filesystem::create_directories(out_dir);
  for (const auto& cell : grid.cells()) {
    const auto label = cell.label();
    const auto dir = out_dir / label;
    const auto results = dir / "results.json";
    if (std::filesystem::exists(results)) {
      std::ifstream in(results);
      auto j = nlohmann::json::parse(in);
      for (const auto& r : j.at("rows")) table.rows.push_back(row_from(r));
      ++table.cells_resumed;
      say(label + ": resumed");
      continue;
    }
    try {
      std::filesystem::create_directories(dir);
      DistSpec spec = DistSpec::ecological();
      spec.prob_dist = cell.prob_dist;
      auto pl = std::get<PowerLaw>(spec.value_dist);
      pl.exponent = cell.value_exponent;
      spec.value_dist = pl;
      spec.validate();

      ModelConfig mc = config.model;
      mc.hidden_size = cell.hidden_size;
      mc.validate();
      const auto ckpt_path = dir / "checkpoint.bin";
      ModelCheckpoint ckpt;
      if (std::filesystem::exists(ckpt_path)) {
        ckpt = load_checkpoint(ckpt_path);
        say(label + ": reusing checkpoint");
      } else {
        auto corpus = generate_corpus(spec, cell.n_equations, config.corpus_seed,
                                      static_cast<std::size_t>(mc.context_length));
        std::vector<std::string> lines;
        lines.reserve(corpus.records.size());
        for (const auto& r : corpus.records) lines.push_back(r.rendered);
        say(label + ": training on " + std::to_string(lines.size()) + " equations");
        auto trained = train(mc, config.train, lines);
        table.training_steps += trained.log.steps;
        ckpt = trained.checkpoint;
        ckpt.metadata["distribution"] = spec;
        save_checkpoint(ckpt, ckpt_path);
      }
      const auto model = ckpt.to_model();
      const auto hash = ckpt.hash();
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& ds : config.datasets) {
        SweepRow row{label, ds.name};
        try {
          auto st = stylize_all(ds.problems, config.bases, static_cast<std::size_t>(mc.context_length));
          if (!st.overflow_ids.empty()) {
            throw StylizationOverflowError(st.overflow_ids.front(),
                                           std::to_string(st.overflow_ids.size()) + " problems overflow");
          }
          auto emb = embed_all(model, st.stylized, hash);
          CvOptions cv = config.cv;
          cv.grouped = ds.grouped;
          auto fit = cross_validate(emb, ds.problems, cv);
          row.r2_cv_mean = fit.r2_cv_mean;
          row.r2_cv_se = fit.r2_cv_se;
        } catch (const std::exception& e) {
          row.status = std::string("failed: ") + e.what();
        }
        say(label + " / " + ds.name + ": " + row.status);
        rows.push_back(row_json(row));
        table.rows.push_back(row);
      }
      write_atomic(results, nlohmann::json{{"cell", label}, {"rows", rows}}.dump(2));
    } catch (const std::exception& e) {
      say(label + ": failed: " + e.what());
      for (const auto& ds : config.datasets) {
        table.rows.push_back({label, ds.name, std::string("failed: ") + e.what(), 0.0, 0.0});
      }
    }
  }
  return table;
}

}  // namespace evcog
