#include "evcog/choicesets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <unordered_map>

#include "csv.hpp"
#include "evcog/eqgen.hpp"
#include "evcog/errors.hpp"
#include "evcog/tokenizer.hpp"

namespace evcog {

namespace {

class Table {
 public:
  Table(const std::filesystem::path& path, const std::vector<std::string>& required) : path_(path) {
    std::ifstream in(path);
    if (!in) {
      throw IoError("cannot open '" + path.string() +
                    "'. Human choice datasets are not bundled; export the source release to the CSV schema "
                    "documented in README.md and pass its path");
    }
    std::string line;
    if (!std::getline(in, line)) throw IngestionError(path.string() + ": empty file, expected a header row");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    auto header = csv::split_line(line);
    for (std::size_t i = 0; i < header.size(); ++i) index_[std::string(csv::trim(header[i]))] = i;
    for (const auto& col : required) {
      if (!index_.count(col)) throw IngestionError(path.string() + ": missing column '" + col + "'");
    }
    while (std::getline(in, line)) {
      if (csv::trim(line).empty()) continue;
      rows_.push_back(csv::split_line(line));
    }
  }

  std::size_t size() const { return rows_.size(); }

  std::string text(std::size_t row, const std::string& col) const {
    const auto& r = rows_[row];
    std::size_t i = index_.at(col);
    return i < r.size() ? std::string(csv::trim(r[i])) : std::string();
  }

  std::optional<double> maybe_number(std::size_t row, const std::string& col) const {
    auto t = text(row, col);
    if (t.empty()) return std::nullopt;
    auto v = csv::parse_double(t);
    if (!v) fail(row, col, "'" + t + "' is not a number");
    return v;
  }

  double number(std::size_t row, const std::string& col) const {
    auto v = maybe_number(row, col);
    if (!v) fail(row, col, "value is required");
    return *v;
  }

  bool flag(std::size_t row, const std::string& col) const {
    auto t = text(row, col);
    if (t.empty() || t == "0" || t == "false" || t == "FALSE" || t == "False") return false;
    if (t == "1" || t == "true" || t == "TRUE" || t == "True") return true;
    fail(row, col, "'" + t + "' is not a 0/1 flag");
  }

  [[noreturn]] void fail(std::size_t row, const std::string& col, const std::string& what) const {
    throw IngestionError(path_.string() + ": row " + std::to_string(row + 2) + ", column '" + col + "': " + what);
  }

 private:
  std::filesystem::path path_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
};

std::vector<Outcome> risky_option(const Table& t, std::size_t row, const std::string& side, bool ambiguous) {
  std::vector<Outcome> out;
  for (int k = 1; k <= 2; ++k) {
    const std::string xc = side + "_x" + std::to_string(k);
    const std::string pc = side + "_p" + std::to_string(k);
    auto x = t.maybe_number(row, xc);
    auto p = t.maybe_number(row, pc);
    if (!x) {
      if (k == 1) t.fail(row, xc, "value is required");
      if (p && *p != 0.0) t.fail(row, xc, "probability given without a payoff");
      continue;
    }
    Outcome o;
    o.payoff = *x;
    if (ambiguous) {
      o.probability.reset();
    } else {
      if (!p) t.fail(row, pc, "value is required");
      if (k == 2 && *p == 0.0) continue;
      o.probability = *p;
    }
    out.push_back(o);
  }
  return out;
}

bool same_outcomes(const std::vector<Outcome>& a, const std::vector<Outcome>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].payoff != b[i].payoff || a[i].probability != b[i].probability || a[i].delay != b[i].delay ||
        a[i].unit != b[i].unit) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<ChoiceProblem> load_dataset(Source source, const std::filesystem::path& path, IngestReport* report) {
  const Domain domain = domain_of(source);
  Table t(path, domain == Domain::Risky ? kRiskyColumns : kIntertemporalColumns);
  std::vector<ChoiceProblem> problems;
  std::unordered_map<std::string, std::size_t> by_id;
  IngestReport rep;
  rep.rows = t.size();

  for (std::size_t r = 0; r < t.size(); ++r) {
    ChoiceProblem p;
    p.id = t.text(r, "id");
    if (p.id.empty()) t.fail(r, "id", "value is required");
    p.domain = domain;
    p.source = source;
    p.choice_rate_a = t.number(r, "rate_a");
    if (!(p.choice_rate_a >= 0.0 && p.choice_rate_a <= 1.0)) t.fail(r, "rate_a", "must lie in [0, 1]");
    p.n_observations = t.maybe_number(r, "n").value_or(1.0);
    if (!(p.n_observations >= 1.0)) t.fail(r, "n", "must be >= 1");

    if (domain == Domain::Risky) {
      p.option_a = risky_option(t, r, "a", t.flag(r, "amb_a"));
      p.option_b = risky_option(t, r, "b", t.flag(r, "amb_b"));
      p.feedback = t.flag(r, "feedback");
      p.group = p.id;
    } else {
      DelayUnit unit = DelayUnit::None;
      try {
        unit = parse_delay_unit(t.text(r, "unit"));
      } catch (const FormatError& e) {
        t.fail(r, "unit", e.what());
      }
      if (unit == DelayUnit::None) t.fail(r, "unit", "value is required");
      auto delay = [&](const std::string& col) {
        double d = t.number(r, col);
        if (d < 0 || d != std::floor(d)) t.fail(r, col, "delay must be a non-negative integer");
        return static_cast<int>(d);
      };
      p.option_a = {Outcome{t.number(r, "a_x"), 1.0, delay("a_t"), unit}};
      p.option_b = {Outcome{t.number(r, "b_x"), 1.0, delay("b_t"), unit}};
      p.group = t.text(r, "group");
      if (p.group.empty()) p.group = p.id;
    }
    try {
      p.validate();
    } catch (const IngestionError& e) {
      throw IngestionError(path.string() + ": row " + std::to_string(r + 2) + ": " + e.what());
    }

    auto it = by_id.find(p.id);
    if (it == by_id.end()) {
      by_id.emplace(p.id, problems.size());
      problems.push_back(std::move(p));
      continue;
    }
    auto& q = problems[it->second];
    if (!same_outcomes(q.option_a, p.option_a) || !same_outcomes(q.option_b, p.option_b) || q.feedback != p.feedback) {
      t.fail(r, "id", "duplicate id '" + p.id + "' with different options");
    }
    const double n = q.n_observations + p.n_observations;
    q.choice_rate_a = (q.choice_rate_a * q.n_observations + p.choice_rate_a * p.n_observations) / n;
    q.n_observations = n;
    ++rep.pooled_rows;
  }
  rep.problems = problems.size();
  for (const auto& p : problems) rep.feedback_problems += p.feedback;
  if (report) *report = rep;
  return problems;
}

std::vector<ChoiceProblem> filter_feedback(const std::vector<ChoiceProblem>& problems, std::size_t* removed) {
  std::vector<ChoiceProblem> out;
  out.reserve(problems.size());
  std::copy_if(problems.begin(), problems.end(), std::back_inserter(out),
               [](const ChoiceProblem& p) { return !p.feedback; });
  if (removed) *removed = problems.size() - out.size();
  return out;
}

double DiscountBases::base(DelayUnit unit) const {
  switch (unit) {
    case DelayUnit::Day:
      return day;
    case DelayUnit::Month:
      return month;
    case DelayUnit::Year:
      return year;
    case DelayUnit::None:
      break;
  }
  throw UnsupportedError("intertemporal outcome without a delay unit");
}

void to_json(nlohmann::json& j, const StylizedProblem& s) {
  j = {{"problem_id", s.problem_id}, {"expr_a", s.expr_a}, {"expr_b", s.expr_b}, {"scale_factor", s.scale_factor}};
}

void from_json(const nlohmann::json& j, StylizedProblem& s) {
  s.problem_id = j.at("problem_id").get<std::string>();
  s.expr_a = j.at("expr_a").get<std::string>();
  s.expr_b = j.at("expr_b").get<std::string>();
  s.scale_factor = j.value("scale_factor", 1.0);
}

namespace {

std::string render_option(const std::vector<Outcome>& option, Domain domain, double scale, const DiscountBases& bases) {
  std::vector<const Outcome*> terms;
  for (const auto& o : option) {
    if (domain == Domain::Risky && !o.ambiguous() && Decimal2::from_double(*o.probability).cents == 0) continue;
    terms.push_back(&o);
  }
  if (terms.empty()) terms.push_back(&option.front());
  // Gains first so that a mixed gamble reads "p*x-q*y".
  std::stable_partition(terms.begin(), terms.end(), [](const Outcome* o) { return o->payoff >= 0.0; });

  std::string out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Outcome& o = *terms[i];
    Decimal2 x = Decimal2::from_double(std::abs(o.payoff) * scale);
    bool negative = o.payoff < 0.0 && x.cents != 0;
    if (negative) {
      out += '-';
    } else if (i > 0) {
      out += '+';
    }
    if (domain == Domain::Risky) {
      out += o.ambiguous() ? std::string(kAmbToken) : Decimal2::from_double(*o.probability).magnitude_string();
    } else {
      out += Decimal2::from_double(bases.base(o.unit)).magnitude_string();
      out += '^';
      out += std::to_string(o.delay);
    }
    out += '*';
    out += x.magnitude_string();
  }
  return out + "=";
}

}  // namespace

StylizedProblem stylize(const ChoiceProblem& problem, const DiscountBases& bases, std::size_t context_length) {
  double max_abs = 0.0;
  for (const auto* opt : {&problem.option_a, &problem.option_b}) {
    for (const auto& o : *opt) max_abs = std::max(max_abs, std::abs(o.payoff));
  }
  StylizedProblem s;
  s.problem_id = problem.id;
  s.scale_factor = max_abs > kMaxStylizedValue ? kMaxStylizedValue / max_abs : 1.0;
  s.expr_a = render_option(problem.option_a, problem.domain, s.scale_factor, bases);
  s.expr_b = render_option(problem.option_b, problem.domain, s.scale_factor, bases);
  for (const auto* e : {&s.expr_a, &s.expr_b}) {
    std::size_t n = token_count(*e);
    if (n > context_length) {
      throw StylizationOverflowError(problem.id, "\"" + *e + "\" has " + std::to_string(n) + " tokens, limit " +
                                                     std::to_string(context_length));
    }
  }
  return s;
}

StylizeReport stylize_all(const std::vector<ChoiceProblem>& problems, const DiscountBases& bases,
                          std::size_t context_length) {
  StylizeReport report;
  report.stylized.reserve(problems.size());
  for (const auto& p : problems) {
    try {
      report.stylized.push_back(stylize(p, bases, context_length));
    } catch (const StylizationOverflowError& e) {
      report.overflow_ids.push_back(e.problem_id());
    }
  }
  return report;
}

namespace {

double signed_value(const DistSpec& spec, Rng& rng) {
  double x = sample_value(spec, rng).value();
  return uniform01(rng) < 0.5 ? -x : x;
}

std::vector<Outcome> risky_gamble(const DistSpec& spec, Rng& rng) {
  std::vector<Outcome> option;
  if (uniform01(rng) < 0.5) {
    option.push_back(Outcome{signed_value(spec, rng), 1.0, 0, DelayUnit::None});
    return option;
  }
  Decimal2 p = sample_probability(spec, rng);
  option.push_back(Outcome{signed_value(spec, rng), p.value(), 0, DelayUnit::None});
  option.push_back(Outcome{signed_value(spec, rng), Decimal2{100 - p.cents}.value(), 0, DelayUnit::None});
  return option;
}

}  // namespace

SurrogateData generate_surrogate(Domain domain, std::size_t n_problems, const SurrogateModel& model,
                                 const SurrogateOptions& options) {
  if (!(options.temperature >= 0.0)) throw ConfigError("surrogate.temperature: must be >= 0");
  if (domain == Domain::Risky && !std::holds_alternative<PTParams>(model)) {
    throw ConfigError("surrogate: risky problems need prospect-theory parameters");
  }
  if (domain == Domain::Intertemporal && !std::holds_alternative<HyperbolicParams>(model)) {
    throw ConfigError("surrogate: intertemporal problems need hyperbolic parameters");
  }
  std::visit([](const auto& p) { p.validate(); }, model);

  const DistSpec spec = DistSpec::ecological();
  Rng rng = make_rng(options.seed, 0x5077);
  SurrogateData data;
  data.problems.reserve(n_problems);
  for (std::size_t i = 0; i < n_problems; ++i) {
    ChoiceProblem p;
    p.id = "s" + std::to_string(i);
    p.group = p.id;
    p.domain = domain;
    p.source = Source::Surrogate;
    double dv = 0.0;
    if (domain == Domain::Risky) {
      const auto& pt = std::get<PTParams>(model);
      p.option_a = risky_gamble(spec, rng);
      p.option_b = risky_gamble(spec, rng);
      dv = pt_option_utility(p.option_a, pt) - pt_option_utility(p.option_b, pt);
    } else {
      const auto& hy = std::get<HyperbolicParams>(model);
      // Smaller-sooner versus larger-later.
      double x_soon = sample_value(spec, rng).value();
      double x_late = std::min(300.0, Decimal2::from_double(x_soon * (1.05 + 0.95 * uniform01(rng))).value());
      std::uniform_int_distribution<int> soon(0, 10);
      std::uniform_int_distribution<int> gap(1, 30);
      int t_soon = soon(rng);
      int t_late = t_soon + gap(rng);
      p.option_a = {Outcome{x_soon, 1.0, t_soon, DelayUnit::Day}};
      p.option_b = {Outcome{x_late, 1.0, t_late, DelayUnit::Day}};
      dv = hyperbolic_option_value(p.option_a, hy.k) - hyperbolic_option_value(p.option_b, hy.k);
    }
    double rate = choice_probability(dv, options.temperature);
    data.true_rates.push_back(rate);
    data.value_differences.push_back(dv);
    if (options.n_observations > 0) {
      std::binomial_distribution<std::size_t> draw(options.n_observations, rate);
      p.choice_rate_a = static_cast<double>(draw(rng)) / static_cast<double>(options.n_observations);
      p.n_observations = static_cast<double>(options.n_observations);
    } else {
      p.choice_rate_a = rate;
      p.n_observations = 1.0;
    }
    data.problems.push_back(std::move(p));
  }
  return data;
}

double noise_ceiling(const std::vector<double>& true_rates, double n_observations) {
  if (true_rates.size() < 2) throw TooSmallError("noise ceiling needs at least two problems");
  if (!(n_observations > 0.0)) throw ConfigError("noise ceiling: n_observations must be > 0");
  const double n = static_cast<double>(true_rates.size());
  double mean = 0.0;
  for (double p : true_rates) mean += p;
  mean /= n;
  double var = 0.0;
  double noise = 0.0;
  for (double p : true_rates) {
    var += (p - mean) * (p - mean);
    noise += p * (1.0 - p) / n_observations;
  }
  var /= n;
  noise /= n;
  return var + noise > 0.0 ? var / (var + noise) : 0.0;
}

namespace {

template <typename T>
void write_jsonl(const std::vector<T>& items, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& item : items) out << nlohmann::json(item).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void write_problems_jsonl(const std::vector<ChoiceProblem>& problems, const std::filesystem::path& path) {
  write_jsonl(problems, path);
}

std::vector<ChoiceProblem> read_problems_jsonl(const std::filesystem::path& path) {
  return read_jsonl<ChoiceProblem>(path);
}

void write_stylized_jsonl(const std::vector<StylizedProblem>& stylized, const std::filesystem::path& path) {
  write_jsonl(stylized, path);
}

std::vector<StylizedProblem> read_stylized_jsonl(const std::filesystem::path& path) {
  return read_jsonl<StylizedProblem>(path);
}

}  // namespace evcog
