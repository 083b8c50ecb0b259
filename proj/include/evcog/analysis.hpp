#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "evcog/choicesets.hpp"
#include "evcog/eqgen.hpp"
#include "evcog/model.hpp"
#include "evcog/probe.hpp"
#include "evcog/trainer.hpp"

namespace evcog {

// ---------------------------------------------------------------------------
// 1D metric MDS

struct MdsOptions {
  int restarts = 64;  // the first starts from classical MDS, the rest at random
  std::size_t max_iterations = 1000;
  double tolerance = 1e-12;  // relative stress decrease that counts as converged
  std::uint64_t seed = 0;
};

struct MdsResult {
  std::vector<double> coordinates;
  double stress = 0.0;             // sum over pairs of (|x_i - x_j| - d_ij)^2
  double normalized_stress = 0.0;  // sqrt(stress / sum d_ij^2)
  std::vector<double> stress_trace;  // of the winning restart
  bool converged = false;
};

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points);
// Stress majorization (SMACOF) in one dimension. Throws ConvergenceError with
// the stress trace when no restart converges.
MdsResult mds_1d(const Eigen::MatrixXd& distances, const MdsOptions& options = {});

// Max-min normalization onto [0, 1]; constant input maps to zeros.
std::vector<double> minmax_normalize(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Implicit curves

enum class CurveKind { Probability, Value, Discount };
std::string to_string(CurveKind k);
CurveKind parse_curve_kind(const std::string& s);

// Probabilities 0..1 step 0.01; values -300..300 step 1; discount factors
// 0.99^t for t = 30..0 (ascending factor).
std::vector<double> curve_grid(CurveKind kind);
// Standalone token text for one grid point: "0.37", "-12", "0.99^7".
std::string curve_input_text(CurveKind kind, double x);
// Delay t of each discount grid point (30..0).
std::vector<int> discount_delays();

struct ImplicitCurve {
  CurveKind kind = CurveKind::Probability;
  std::vector<double> input_grid;
  std::vector<double> raw_1d;        // MDS output, oriented increasing
  std::vector<double> embedding_1d;  // normalized for probability/discount
  double stress = 0.0;
  nlohmann::json fitted_params = nlohmann::json::object();

  // input,raw_1d,normalized_1d
  std::string to_csv() const;
};

// Embeds each grid input pooled at its last token, then reduces the pairwise
// Euclidean distances to one dimension.
ImplicitCurve implicit_curve(const Gpt<float>& model, CurveKind kind, const MdsOptions& options = {});
// Same pipeline from precomputed embeddings (rows aligned with curve_grid).
ImplicitCurve implicit_curve_from_embeddings(CurveKind kind, const Eigen::MatrixXd& embeddings,
                                             const MdsOptions& options = {});

// Least-squares fit of the behavioral form to a curve by multi-start
// Nelder-Mead. Probability: w(p; gamma). Discount: the hyperbolic factor
// 1/(1+kt) max-min normalized over the delay grid. Value: s * U(x; alpha,
// beta, lambda) against the curve re-anchored at x = 0, with s >= 0 solved in
// closed form. Throws FitError with residuals on failure.
nlohmann::json fit_implicit(const ImplicitCurve& curve, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Arithmetic accuracy

struct AccuracyReport {
  std::string test_dist;
  std::size_t n_test = 0;
  double correct_probability = 0.0;  // mean P(result tokens + <PAD> | lhs)
  double correct_probability_se = 0.0;
  double integer_match_rate = 0.0;  // greedy integer part equals truth

  nlohmann::json to_json() const;
};

// Scores already-rendered equations "lhs=result".
AccuracyReport arithmetic_accuracy(const Gpt<float>& model, const std::vector<std::string>& lines,
                                   const std::string& test_dist = "custom");
// Generates a fresh test corpus from `spec` with `seed` and scores it.
AccuracyReport arithmetic_accuracy(const Gpt<float>& model, const DistSpec& spec, const std::string& test_dist,
                                   std::size_t n_test = 20000, std::uint64_t seed = 0xacc);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  int hidden_size = 320;
  std::size_t n_equations = 1000000;
  BetaDist prob_dist;
  double value_exponent = -0.945;

  std::string label() const;
};

struct SweepGrid {
  std::vector<int> hidden_sizes;
  std::vector<std::size_t> data_quantities;
  std::vector<BetaDist> prob_dists;
  std::vector<double> value_exponents;

  std::vector<SweepCell> cells() const;  // full cross product, in axis order
  // Model size by data quantity on ecological data.
  static SweepGrid size_by_quantity();
  // Probability distribution by value exponent at the default size.
  static SweepGrid distribution_grid();
};

struct SweepDataset {
  std::string name;
  std::vector<ChoiceProblem> problems;
  bool grouped = false;
};

struct SweepConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t corpus_seed = 0;
  CvOptions cv;
  DiscountBases bases;
  std::vector<SweepDataset> datasets;
};

struct SweepRow {
  std::string cell;
  std::string dataset;
  std::string status = "ok";  // "ok" or the failure message
  double r2_cv_mean = 0.0;
  double r2_cv_se = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::size_t training_steps = 0;  // steps run in this invocation
  std::size_t cells_resumed = 0;

  std::string to_csv() const;
  std::string to_text() const;
};

// Trains and probes every cell under out_dir/<cell label>/. Finished cells
// (results.json present) are loaded instead of recomputed. A failing cell is
// recorded in its rows and the sweep continues.
SweepTable run_sweep(const SweepGrid& grid, const SweepConfig& config, const std::filesystem::path& out_dir,
                     const std::function<void(const std::string&)>& log = {});

}  // namespace evcog
