#include "evcog/problem.hpp"

#include <cmath>

#include "evcog/errors.hpp"

namespace evcog {

std::string to_string(Domain d) { return d == Domain::Risky ? "risky" : "intertemporal"; }

std::string to_string(Source s) {
  switch (s) {
    case Source::Choices13k:
      return "choices13k";
    case Source::Cpc18:
      return "cpc18";
    case Source::Gershman20:
      return "gershman20";
    case Source::Agrawal23:
      return "agrawal23";
    case Source::Surrogate:
      return "surrogate";
  }
  return "unknown";
}

std::string to_string(DelayUnit u) {
  switch (u) {
    case DelayUnit::None:
      return "none";
    case DelayUnit::Day:
      return "day";
    case DelayUnit::Month:
      return "month";
    case DelayUnit::Year:
      return "year";
  }
  return "unknown";
}

Domain parse_domain(const std::string& s) {
  if (s == "risky") return Domain::Risky;
  if (s == "intertemporal") return Domain::Intertemporal;
  throw UsageError("unknown domain '" + s + "' (expected risky|intertemporal)");
}

Source parse_source(const std::string& s) {
  for (Source src : {Source::Choices13k, Source::Cpc18, Source::Gershman20, Source::Agrawal23, Source::Surrogate}) {
    if (to_string(src) == s) return src;
  }
  throw UsageError("unknown source '" + s + "' (expected choices13k|cpc18|gershman20|agrawal23|surrogate)");
}

DelayUnit parse_delay_unit(const std::string& s) {
  if (s == "day" || s == "days") return DelayUnit::Day;
  if (s == "month" || s == "months") return DelayUnit::Month;
  if (s == "year" || s == "years") return DelayUnit::Year;
  if (s == "none" || s.empty()) return DelayUnit::None;
  throw FormatError("unknown delay unit '" + s + "' (expected day|month|year)");
}

Domain domain_of(Source s) {
  switch (s) {
    case Source::Choices13k:
    case Source::Cpc18:
      return Domain::Risky;
    case Source::Gershman20:
    case Source::Agrawal23:
      return Domain::Intertemporal;
    case Source::Surrogate:
      break;
  }
  throw UsageError("surrogate data has no fixed domain");
}

namespace {

void check_option(const ChoiceProblem& p, const std::vector<Outcome>& option, const char* name) {
  const std::string where = "problem '" + p.id + "' option " + name;
  if (option.empty()) throw IngestionError(where + ": no outcomes");
  double sum = 0.0;
  bool ambiguous = false;
  for (const auto& o : option) {
    if (!std::isfinite(o.payoff)) throw IngestionError(where + ": non-finite payoff");
    if (o.delay < 0) throw IngestionError(where + ": negative delay");
    if (o.ambiguous()) {
      ambiguous = true;
      continue;
    }
    if (!(*o.probability >= 0.0 && *o.probability <= 1.0)) {
      throw IngestionError(where + ": probability outside [0, 1]");
    }
    sum += *o.probability;
  }
  if (p.domain == Domain::Risky && !ambiguous && std::abs(sum - 1.0) > 1e-9) {
    throw IngestionError(where + ": probabilities sum to " + std::to_string(sum));
  }
}

}  // namespace

void ChoiceProblem::validate() const {
  if (id.empty()) throw IngestionError("problem with empty id");
  check_option(*this, option_a, "A");
  check_option(*this, option_b, "B");
  if (!(choice_rate_a >= 0.0 && choice_rate_a <= 1.0)) {
    throw IngestionError("problem '" + id + "': choice rate outside [0, 1]");
  }
  if (!(n_observations >= 1.0)) throw IngestionError("problem '" + id + "': n_observations must be >= 1");
}

void to_json(nlohmann::json& j, const Outcome& o) {
  j = {{"payoff", o.payoff}, {"delay", o.delay}, {"unit", to_string(o.unit)}};
  if (o.probability) {
    j["probability"] = *o.probability;
  } else {
    j["probability"] = "AMBIGUOUS";
  }
}

void from_json(const nlohmann::json& j, Outcome& o) {
  o.payoff = j.at("payoff").get<double>();
  const auto& p = j.at("probability");
  if (p.is_string()) {
    if (p.get<std::string>() != "AMBIGUOUS") throw FormatError("probability must be a number or \"AMBIGUOUS\"");
    o.probability.reset();
  } else {
    o.probability = p.get<double>();
  }
  o.delay = j.value("delay", 0);
  o.unit = parse_delay_unit(j.value("unit", std::string("none")));
}

void to_json(nlohmann::json& j, const ChoiceProblem& p) {
  j = {{"id", p.id},
       {"domain", to_string(p.domain)},
       {"option_a", p.option_a},
       {"option_b", p.option_b},
       {"choice_rate_a", p.choice_rate_a},
       {"n_observations", p.n_observations},
       {"feedback", p.feedback},
       {"source", to_string(p.source)},
       {"group", p.group}};
}

void from_json(const nlohmann::json& j, ChoiceProblem& p) {
  p.id = j.at("id").get<std::string>();
  p.domain = parse_domain(j.at("domain").get<std::string>());
  p.option_a = j.at("option_a").get<std::vector<Outcome>>();
  p.option_b = j.at("option_b").get<std::vector<Outcome>>();
  p.choice_rate_a = j.at("choice_rate_a").get<double>();
  p.n_observations = j.value("n_observations", 1.0);
  p.feedback = j.value("feedback", false);
  p.source = parse_source(j.value("source", std::string("surrogate")));
  p.group = j.value("group", p.id);
}

}  // namespace evcog
