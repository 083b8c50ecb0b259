#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evcog {

enum class Domain { Risky, Intertemporal };
enum class Source { Choices13k, Cpc18, Gershman20, Agrawal23, Surrogate };
enum class DelayUnit { None, Day, Month, Year };

std::string to_string(Domain d);
std::string to_string(Source s);
std::string to_string(DelayUnit u);
Domain parse_domain(const std::string& s);
Source parse_source(const std::string& s);
DelayUnit parse_delay_unit(const std::string& s);
Domain domain_of(Source s);  // Surrogate has no fixed domain; throws UsageError

struct Outcome {
  double payoff = 0.0;
  std::optional<double> probability;  // nullopt: ambiguous
  int delay = 0;
  DelayUnit unit = DelayUnit::None;

  bool ambiguous() const noexcept { return !probability.has_value(); }
};

struct ChoiceProblem {
  std::string id;
  Domain domain = Domain::Risky;
  std::vector<Outcome> option_a;
  std::vector<Outcome> option_b;
  double choice_rate_a = 0.5;
  double n_observations = 1.0;
  bool feedback = false;
  Source source = Source::Surrogate;
  // Grouping key for grouped cross-validation; defaults to the id.
  std::string group;

  // Throws IngestionError describing the first violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const Outcome& o);
void from_json(const nlohmann::json& j, Outcome& o);
void to_json(nlohmann::json& j, const ChoiceProblem& p);
void from_json(const nlohmann::json& j, ChoiceProblem& p);

}  // namespace evcog
