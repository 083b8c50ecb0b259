#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcog/random.hpp"
#include "evcog/tokenizer.hpp"

namespace evcog {

inline constexpr const char* kGeneratorVersion = "evcog-eqgen/1";

// Fixed-point decimal with two fractional digits, stored as integer cents.
struct Decimal2 {
  std::int64_t cents = 0;

  constexpr double value() const noexcept { return static_cast<double>(cents) / 100.0; }
  static Decimal2 from_double(double v);  // rounds half away from zero
  // Unsigned rendering with trailing zeros and a trailing point trimmed:
  // 5000 -> "50", 720 -> "7.2", 5 -> "0.05". Magnitude only.
  std::string magnitude_string() const;
  // Result rendering with an explicit sign ("+50", "-192.93", "+0").
  std::string signed_string() const;

  friend constexpr bool operator==(Decimal2, Decimal2) = default;
  friend constexpr auto operator<=>(Decimal2, Decimal2) = default;
};

struct BetaDist {
  double a = 0.27;
  double b = 0.27;
};
struct Uniform01 {};
using ProbDist = std::variant<BetaDist, Uniform01>;

// Density proportional to x^exponent on [lo, hi].
struct PowerLaw {
  double exponent = -0.945;
  double lo = 0.01;
  double hi = 300.0;
};
struct UniformRange {
  double lo = 0.0;
  double hi = 300.0;
};
using ValueDist = std::variant<PowerLaw, UniformRange>;

struct DistSpec {
  ProbDist prob_dist = BetaDist{};
  ValueDist value_dist = PowerLaw{};
  double discount_term_share = 0.5;
  double amb_mask_rate = 0.1;
  bool sign_ablation = false;
  // Alternative ablation: drop the right-hand side entirely ("lhs=").
  bool remove_answers = false;
  int max_exponent = 30;

  static DistSpec ecological();
  static DistSpec uniform();

  // Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const DistSpec& spec);
void from_json(const nlohmann::json& j, DistSpec& spec);

enum class TermKind { ProbabilityValue, DiscountValue };
enum class Op { Plus, Minus };

struct Term {
  TermKind kind = TermKind::ProbabilityValue;
  Decimal2 p_or_d;      // probability or discount base, in [0, 1]
  int exponent = 1;     // always 1 for ProbabilityValue
  Decimal2 value;       // in [0, 300]
  bool masked = false;  // probability / discount base rendered as <AMB>
  bool value_first = false;

  std::string render() const;
};

struct EquationRecord {
  std::array<Term, 2> lhs_terms;
  Op op = Op::Plus;
  Decimal2 true_result;
  std::string rendered;
  bool result_sign_flipped = false;

  // Text up to and including "=".
  std::string lhs() const;
  // Rendered right-hand side ("" when answers are removed).
  std::string rhs() const;
};

// Draws from spec.prob_dist and rounds to two decimals.
Decimal2 sample_probability(const DistSpec& spec, Rng& rng);
// Inverse-CDF draw from spec.value_dist, rounded to two decimals, within [lo, hi].
Decimal2 sample_value(const DistSpec& spec, Rng& rng);

// Evaluates p*x (or d^t*x) per term exactly, applies `op`, rounds the final
// result half away from zero to two decimals.
Decimal2 exact_result(const std::array<Term, 2>& terms, Op op);

std::string render_equation(const std::array<Term, 2>& terms, Op op, Decimal2 shown_result, bool remove_answer = false);

struct CorpusStats {
  std::size_t rejected = 0;  // records resampled for exceeding the context
};

struct Corpus {
  std::vector<EquationRecord> records;
  CorpusStats stats;
};

// Deterministic given (spec, n_equations, seed). The corpus is built from
// independently seeded sub-streams of kChunkSize records concatenated in order.
inline constexpr std::size_t kCorpusChunkSize = 4096;
Corpus generate_corpus(const DistSpec& spec, std::size_t n_equations, std::uint64_t seed,
                       std::size_t context_length = kContextLength);

// One equation per line, '\n' terminated.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::vector<std::string> read_corpus_lines(const std::filesystem::path& path);

nlohmann::json corpus_metadata(const DistSpec& spec, std::size_t n_equations, std::uint64_t seed,
                               const CorpusStats& stats);

}  // namespace evcog
