#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "evcog/problem.hpp"
#include "evcog/utility.hpp"

namespace evcog {

// CSV schemas (UTF-8, header row, columns in any order, extra columns ignored).
//
// Risky sources (choices13k, cpc18):
//   id,a_x1,a_p1,a_x2,a_p2,b_x1,b_p1,b_x2,b_p2,amb_a,amb_b,rate_a,n,feedback
//   Second outcomes may be left empty for one-outcome options. amb_a/amb_b
//   (0/1) mark options whose probabilities were not shown; their p columns
//   are ignored. feedback is 0/1.
//
// Intertemporal sources (gershman20, agrawal23):
//   id,a_x,a_t,b_x,b_t,unit,rate_a,n,group
//   unit is day|month|year. Rows sharing an id are trials of one problem and
//   are pooled (n-weighted rate). group is the grouped-CV key; empty means id.
inline const std::vector<std::string> kRiskyColumns = {"id",   "a_x1", "a_p1",  "a_x2",   "a_p2",
                                                       "b_x1", "b_p1", "b_x2",  "b_p2",   "amb_a",
                                                       "amb_b", "rate_a", "n", "feedback"};
inline const std::vector<std::string> kIntertemporalColumns = {"id", "a_x", "a_t", "b_x", "b_t",
                                                               "unit", "rate_a", "n", "group"};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t problems = 0;
  std::size_t feedback_problems = 0;
  std::size_t pooled_rows = 0;  // rows merged into an earlier problem with the same id
};

// Throws IoError when the file is missing and IngestionError (naming the
// column and row) on schema or value errors.
std::vector<ChoiceProblem> load_dataset(Source source, const std::filesystem::path& path,
                                        IngestReport* report = nullptr);

// Drops feedback trials; `removed` receives the count.
std::vector<ChoiceProblem> filter_feedback(const std::vector<ChoiceProblem>& problems,
                                           std::size_t* removed = nullptr);

struct DiscountBases {
  double year = 0.85;
  double month = 0.98;
  double day = 0.99;

  double base(DelayUnit unit) const;
};

struct StylizedProblem {
  std::string problem_id;
  std::string expr_a;  // ends with "="
  std::string expr_b;
  double scale_factor = 1.0;
};

void to_json(nlohmann::json& j, const StylizedProblem& s);
void from_json(const nlohmann::json& j, StylizedProblem& s);

// Largest payoff magnitude that fits the training value range.
inline constexpr double kMaxStylizedValue = 300.0;

// Renders both options as arithmetic expressions. Throws
// StylizationOverflowError when either exceeds `context_length` tokens.
StylizedProblem stylize(const ChoiceProblem& problem, const DiscountBases& bases = {},
                        std::size_t context_length = 26);

struct StylizeReport {
  std::vector<StylizedProblem> stylized;  // aligned with the input order, overflow rows omitted
  std::vector<std::string> overflow_ids;
};
StylizeReport stylize_all(const std::vector<ChoiceProblem>& problems, const DiscountBases& bases = {},
                          std::size_t context_length = 26);

// Surrogate human data drawn from the ecological distributions and labelled by
// a known generating model.
using SurrogateModel = std::variant<PTParams, HyperbolicParams>;

struct SurrogateOptions {
  double temperature = 1.0;
  // > 0: choice rates are binomial(n, p)/n; 0: exact rates with weight 1.
  std::size_t n_observations = 0;
  std::uint64_t seed = 0;
};

struct SurrogateData {
  std::vector<ChoiceProblem> problems;
  std::vector<double> true_rates;  // generating-model P(A) before binomial noise
  std::vector<double> value_differences;
};

SurrogateData generate_surrogate(Domain domain, std::size_t n_problems, const SurrogateModel& model,
                                 const SurrogateOptions& options);

// Largest squared correlation any predictor can reach against binomially
// observed rates: Var(p) / (Var(p) + E[p(1-p)/n]).
double noise_ceiling(const std::vector<double>& true_rates, double n_observations);

void write_problems_jsonl(const std::vector<ChoiceProblem>& problems, const std::filesystem::path& path);
std::vector<ChoiceProblem> read_problems_jsonl(const std::filesystem::path& path);
void write_stylized_jsonl(const std::vector<StylizedProblem>& stylized, const std::filesystem::path& path);
std::vector<StylizedProblem> read_stylized_jsonl(const std::filesystem::path& path);

}  // namespace evcog
