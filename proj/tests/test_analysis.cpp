#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "evcog/analysis.hpp"
#include "evcog/errors.hpp"
#include "evcog/tokenizer.hpp"
#include "evcog/random.hpp"
#include "evcog/utility.hpp"

using namespace evcog;

namespace {

// Points along a random line in R^5 at the given positions.
Eigen::MatrixXd on_line(const std::vector<double>& t) {
  Eigen::VectorXd dir(5);
  dir << 0.3, -1.2, 0.7, 2.0, -0.4;
  Eigen::VectorXd origin(5);
  origin << 1, 2, 3, 4, 5;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.size()), 5);
  for (std::size_t i = 0; i < t.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = (origin + t[i] * dir).transpose();
  return m;
}

ImplicitCurve planted_curve(CurveKind kind, std::vector<double> y) {
  ImplicitCurve c;
  c.kind = kind;
  c.input_grid = curve_grid(kind);
  c.raw_1d = y;
  c.embedding_1d = std::move(y);
  return c;
}

}  // namespace

TEST_CASE("1D MDS recovers collinear points") {
  auto three = mds_1d(pairwise_distances(on_line({0.0, 2.0, 0.5})));
  CHECK(three.normalized_stress < 1e-6);
  const auto& x = three.coordinates;
  const bool forward = x[0] < x[2] && x[2] < x[1];
  const bool backward = x[0] > x[2] && x[2] > x[1];
  CHECK((forward || backward));

  std::vector<double> t;
  for (int i = 0; i < 60; ++i) t.push_back(std::sin(0.1 * i) + 0.05 * i);
  auto many = mds_1d(pairwise_distances(on_line(t)));
  CHECK(many.normalized_stress < 1e-6);
  CHECK(many.stress < 1e-6);
  const double unit = (on_line({0.0}).row(0) - on_line({1.0}).row(0)).norm();
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      CHECK(std::abs(many.coordinates[i] - many.coordinates[j]) ==
            doctest::Approx(unit * std::abs(t[i] - t[j])).epsilon(1e-6));
    }
  }
}

TEST_CASE("MDS stress never increases along the majorization trace") {
  Rng rng = make_rng(3, 0);
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd pts(40, 3);
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = nd(rng);
  MdsOptions opt;
  opt.restarts = 8;
  auto r = mds_1d(pairwise_distances(pts), opt);
  CHECK(r.converged);
  REQUIRE(r.stress_trace.size() >= 2);
  for (std::size_t i = 1; i < r.stress_trace.size(); ++i) {
    CHECK(r.stress_trace[i] <= r.stress_trace[i - 1] * (1 + 1e-12));
  }
  CHECK(r.stress == doctest::Approx(r.stress_trace.back()));
  auto again = mds_1d(pairwise_distances(pts), opt);
  CHECK(again.coordinates == r.coordinates);
  opt.max_iterations = 0;
  CHECK_THROWS_AS(mds_1d(pairwise_distances(pts), opt), ConvergenceError);
}

TEST_CASE("max-min normalization") {
  std::vector<double> v = {3, -1, 7, 2};
  auto n = minmax_normalize(v);
  CHECK(n == std::vector<double>{0.5, 0.0, 1.0, 0.375});
  CHECK(minmax_normalize(n) == n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) CHECK((v[i] < v[j]) == (n[i] < n[j]));
  }
  CHECK(minmax_normalize({2, 2}) == std::vector<double>{0, 0});
}

TEST_CASE("curve grids and standalone texts") {
  CHECK(curve_grid(CurveKind::Probability).size() == 101);
  CHECK(curve_grid(CurveKind::Value).size() == 601);
  CHECK(curve_grid(CurveKind::Discount).size() == 31);
  CHECK(curve_input_text(CurveKind::Probability, 0.37) == "0.37");
  CHECK(curve_input_text(CurveKind::Probability, 1.0) == "1");
  CHECK(curve_input_text(CurveKind::Value, -12) == "-12");
  CHECK(curve_input_text(CurveKind::Value, 300) == "300");
  CHECK(curve_input_text(CurveKind::Discount, std::pow(0.99, 7)) == "0.99^7");
  CHECK(curve_input_text(CurveKind::Discount, 1.0) == "0.99^0");
  auto dg = curve_grid(CurveKind::Discount);
  CHECK(std::is_sorted(dg.begin(), dg.end()));
  for (auto kind : {CurveKind::Probability, CurveKind::Value, CurveKind::Discount}) {
    for (double x : curve_grid(kind)) CHECK_NOTHROW(tokenize(curve_input_text(kind, x)));
  }
  CHECK(tokenize("0.37").size() == 3);
  CHECK(tokenize("0.99^7").size() == 5);
}

TEST_CASE("planted curves are recovered") {
  std::vector<double> w;
  for (double p : curve_grid(CurveKind::Probability)) w.push_back(pt_weight(p, 0.7));
  auto g = fit_implicit(planted_curve(CurveKind::Probability, w));
  CHECK(std::abs(g["gamma"].get<double>() - 0.7) < 0.01);
  CHECK(g["r2"].get<double>() > 0.9999);

  std::vector<double> d;
  for (int t : discount_delays()) {
    const double tail = 1.0 / (1.0 + 30 * 0.08);
    d.push_back((1.0 / (1.0 + 0.08 * t) - tail) / (1.0 - tail));
  }
  auto k = fit_implicit(planted_curve(CurveKind::Discount, d));
  CHECK(std::abs(k["k"].get<double>() - 0.08) < 1e-3);

  PTParams pt{0.6, 0.7, 2.0, 1.0, 1.0};
  std::vector<double> v;
  for (double x : curve_grid(CurveKind::Value)) v.push_back(5.0 + 3.0 * pt_utility(x, pt));
  auto u = fit_implicit(planted_curve(CurveKind::Value, v));
  CHECK(std::abs(u["alpha"].get<double>() - 0.6) < 0.01);
  CHECK(std::abs(u["beta"].get<double>() - 0.7) < 0.01);
  CHECK(std::abs(u["lambda"].get<double>() - 2.0) < 0.02);
  CHECK(u["scale"].get<double>() == doctest::Approx(3.0).epsilon(0.02));

  std::vector<double> bad(101, 0.0);
  bad[4] = std::nan("");
  CHECK_THROWS_AS(fit_implicit(planted_curve(CurveKind::Probability, bad)), FitError);
}

TEST_CASE("curve pipeline from embeddings") {
  // Embeddings lie on a line at positions w(p; 0.7), reversed in direction.
  std::vector<double> pos;
  for (double p : curve_grid(CurveKind::Probability)) pos.push_back(-4.0 * pt_weight(p, 0.7));
  MdsOptions opt;
  opt.restarts = 4;
  auto c = implicit_curve_from_embeddings(CurveKind::Probability, on_line(pos), opt);
  CHECK(c.stress < 1e-6);
  CHECK(c.embedding_1d.front() == doctest::Approx(0.0));
  CHECK(c.embedding_1d.back() == doctest::Approx(1.0));
  auto fit = fit_implicit(c);
  CHECK(std::abs(fit["gamma"].get<double>() - 0.7) < 0.01);
  CHECK(c.to_csv().rfind("input,raw_1d,normalized_1d\n", 0) == 0);
  CHECK_THROWS_AS(implicit_curve_from_embeddings(CurveKind::Value, on_line(pos)), DimensionError);
}

TEST_CASE("implicit curve from an untrained model") {
  ModelConfig mc;
  mc.hidden_size = 16;
  mc.layers = 1;
  mc.heads = 2;
  Gpt<float> m(mc);
  m.init_weights(1);
  MdsOptions opt;
  opt.restarts = 4;
  auto c = implicit_curve(m, CurveKind::Discount, opt);
  REQUIRE(c.embedding_1d.size() == 31);
  CHECK(*std::min_element(c.embedding_1d.begin(), c.embedding_1d.end()) == 0.0);
  CHECK(*std::max_element(c.embedding_1d.begin(), c.embedding_1d.end()) == 1.0);
  CHECK(c.raw_1d.back() >= c.raw_1d.front());
}

TEST_CASE("arithmetic accuracy on a memorized corpus") {
  auto corpus = generate_corpus(DistSpec::ecological(), 32, 5);
  std::vector<std::string> lines;
  for (const auto& r : corpus.records) lines.push_back(r.rendered);
  ModelConfig mc;
  mc.hidden_size = 48;
  mc.layers = 2;
  mc.heads = 4;
  mc.dropout = 0.0;
  TrainConfig tc;
  tc.batch_size = 32;
  tc.learning_rate = 5e-3;
  tc.weight_decay = 0.0;
  tc.max_epochs = 400;
  tc.val_every_epochs = 400;
  tc.seed = 2;
  CorpusSplit split{lines, lines};
  auto trained = train(mc, tc, split);
  auto model = trained.checkpoint.to_model();
  auto rep = arithmetic_accuracy(model, lines, "memorized");
  CHECK(rep.n_test == 32);
  CHECK(rep.correct_probability > 0.99);
  CHECK(rep.integer_match_rate == 1.0);
  CHECK(rep.correct_probability_se >= 0.0);

  auto a = arithmetic_accuracy(model, DistSpec::uniform(), "uniform", 200, 9);
  auto b = arithmetic_accuracy(model, DistSpec::uniform(), "uniform", 200, 9);
  CHECK(a.correct_probability == b.correct_probability);
  CHECK(a.integer_match_rate == b.integer_match_rate);
  CHECK(a.correct_probability >= 0.0);
  CHECK(a.correct_probability <= 1.0);
  CHECK(a.to_json()["n_test"] == 200);
}

TEST_CASE("sweep grids") {
  CHECK(SweepGrid::size_by_quantity().cells().size() == 9);
  CHECK(SweepGrid::distribution_grid().cells().size() == 9);
  SweepCell c;
  CHECK(c.label() == "h320_n1000000_beta0.27-0.27_exp-0.945");
}

TEST_CASE("sweep runs, isolates failures and resumes") {
  auto dir = std::filesystem::temp_directory_path() / "evcog_sweep_test";
  std::filesystem::remove_all(dir);
  SweepGrid grid{{16, 15}, {300}, {BetaDist{0.27, 0.27}}, {-0.945}};
  SweepConfig cfg;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.dropout = 0.0;
  cfg.train.batch_size = 64;
  cfg.train.max_epochs = 2;
  cfg.train.val_every_epochs = 1;
  cfg.cv.k = 3;
  cfg.cv.probe.penalty = PenaltyKind::L1;
  cfg.cv.probe.lambda = 1e-2;
  auto data = generate_surrogate(Domain::Risky, 60, PTParams{0.8, 0.8, 2.0, 0.6, 5.0}, {5.0, 20, 1});
  cfg.datasets.push_back({"surrogate", data.problems, false});

  auto first = run_sweep(grid, cfg, dir);
  REQUIRE(first.rows.size() == 2);
  CHECK(first.rows[0].status == "ok");
  CHECK(first.rows[1].status.rfind("failed", 0) == 0);
  CHECK(first.training_steps > 0);
  CHECK(first.cells_resumed == 0);

  grid.hidden_sizes = {16};
  auto once = run_sweep(grid, cfg, dir);
  CHECK(once.rows.size() == 1);
  CHECK(once.training_steps == 0);
  CHECK(once.cells_resumed == 1);
  auto twice = run_sweep(grid, cfg, dir);
  CHECK(twice.to_csv() == once.to_csv());
  CHECK(once.rows[0].r2_cv_mean == first.rows[0].r2_cv_mean);
  CHECK(once.to_text().find("surrogate") != std::string::npos);
}
