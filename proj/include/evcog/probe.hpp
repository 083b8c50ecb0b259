#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "evcog/choicesets.hpp"
#include "evcog/metrics.hpp"
#include "evcog/model.hpp"
#include "evcog/problem.hpp"

namespace evcog {

struct EmbeddingSet {
  std::string problem_id;
  std::vector<double> e_a;
  std::vector<double> e_b;
  std::vector<double> e_diff;  // e_a - e_b
  std::string source_checkpoint;
};

enum class Pooling { EqualsToken, Mean };
std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

// Final-layer hidden state (input to the unembedding, dropout off) at the "="
// token of each expression, or the mean over positions up to it.
EmbeddingSet embed(const Gpt<float>& model, const StylizedProblem& stylized, const std::string& checkpoint_hash = {},
                   Pooling pooling = Pooling::EqualsToken);
std::vector<EmbeddingSet> embed_all(const Gpt<float>& model, const std::vector<StylizedProblem>& stylized,
                                    const std::string& checkpoint_hash = {}, Pooling pooling = Pooling::EqualsToken);

// Hidden states for arbitrary expressions, pooled at the last token. Used for
// standalone-token probes.
Eigen::MatrixXd embed_texts(const Gpt<float>& model, const std::vector<std::string>& texts,
                            Pooling pooling = Pooling::EqualsToken);

enum class PenaltyKind { None, L1 };
std::string to_string(PenaltyKind k);
PenaltyKind parse_penalty(const std::string& s);

struct ProbeOptions {
  PenaltyKind penalty = PenaltyKind::L1;
  // Fixed L1 strength; when empty it is chosen on an inner 80/20 split of the
  // training data from `lambda_grid`.
  std::optional<double> lambda;
  std::vector<double> lambda_grid = default_lambda_grid();
  double inner_validation_fraction = 0.2;
  std::size_t newton_max_iterations = 100;  // outer Newton steps, both penalties
  std::size_t l1_max_iterations = 20000;    // total coordinate-descent sweeps
  double tolerance = 1e-6;
  std::uint64_t seed = 0;

  // 8 log-spaced values from 1e-4 to 1.
  static std::vector<double> default_lambda_grid();
};

// Fractional-response logistic regression of choice rates on
// [e_a | e_b | e_diff] plus an intercept, weighted by n_observations. Features
// are standardized internally; reported coefficients are on the original
// scale, intercept last. Throws ConvergenceError when the iteration cap is hit,
// TooSmallError below 10 problems and UsageError when ids do not align.
FitResult fit_probe(const std::vector<EmbeddingSet>& embeddings, const std::vector<ChoiceProblem>& problems,
                    const ProbeOptions& options = {});

struct CvOptions {
  int k = 10;
  // Group key per problem (ChoiceProblem::group); folds keep groups together.
  bool grouped = false;
  ProbeOptions probe;
};

// k-fold cross-validated squared Pearson r. The penalty strength is selected
// inside each training fold only; per-fold id digests are recorded in
// diagnostics["folds"] to audit that validation rows never enter fitting.
FitResult cross_validate(const std::vector<EmbeddingSet>& embeddings, const std::vector<ChoiceProblem>& problems,
                         const CvOptions& options = {});

// JSON-lines: optional header {"dimension": d}, then one
// {problem_id, e_a: [...], e_b: [...]} object per line. Throws FormatError on
// ragged dimensions or a header mismatch.
std::vector<EmbeddingSet> import_external_embeddings(const std::filesystem::path& path,
                                                     std::size_t* dimension = nullptr);
void write_embeddings_jsonl(const std::vector<EmbeddingSet>& embeddings, const std::filesystem::path& path);

// Lower-level solver on a prepared design (no intercept column; one is
// added). Exposed for tests and the analysis module.
struct LogisticFit {
  Eigen::VectorXd coefficients;  // original feature scale
  double intercept = 0.0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  double lambda = 0.0;
};
LogisticFit fit_fractional_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& rates,
                                    const Eigen::VectorXd& weights, PenaltyKind penalty, double lambda,
                                    const ProbeOptions& options);
Eigen::VectorXd predict_logistic(const LogisticFit& fit, const Eigen::MatrixXd& X);

}  // namespace evcog
