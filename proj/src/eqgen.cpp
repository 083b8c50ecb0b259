#include "evcog/eqgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <thread>

#include <boost/multiprecision/cpp_int.hpp>

#include "evcog/errors.hpp"

namespace evcog {

namespace mp = boost::multiprecision;

Decimal2 Decimal2::from_double(double v) { return Decimal2{std::llround(v * 100.0)}; }

std::string Decimal2::magnitude_string() const {
  std::int64_t mag = cents < 0 ? -cents : cents;
  std::string out = std::to_string(mag / 100);
  std::int64_t frac = mag % 100;
  if (frac != 0) {
    out += '.';
    out += static_cast<char>('0' + frac / 10);
    if (frac % 10 != 0) out += static_cast<char>('0' + frac % 10);
  }
  return out;
}

std::string Decimal2::signed_string() const { return (cents < 0 ? "-" : "+") + magnitude_string(); }

DistSpec DistSpec::ecological() { return DistSpec{}; }

DistSpec DistSpec::uniform() {
  DistSpec spec;
  spec.prob_dist = Uniform01{};
  spec.value_dist = UniformRange{0.0, 300.0};
  return spec;
}

void DistSpec::validate() const {
  if (const auto* beta = std::get_if<BetaDist>(&prob_dist)) {
    if (!(beta->a > 0.0) || !(beta->b > 0.0)) throw ConfigError("prob_dist: Beta parameters must be > 0");
  }
  if (const auto* pl = std::get_if<PowerLaw>(&value_dist)) {
    if (!(pl->lo > 0.0)) throw ConfigError("value_dist.lo: power law lower cutoff must be > 0");
    if (!(pl->lo < pl->hi)) throw ConfigError("value_dist: requires lo < hi");
    if (pl->hi > 300.0) throw ConfigError("value_dist.hi: values are limited to 300");
  } else {
    const auto& ur = std::get<UniformRange>(value_dist);
    if (!(ur.lo < ur.hi)) throw ConfigError("value_dist: requires lo < hi");
    if (ur.lo < 0.0 || ur.hi > 300.0) throw ConfigError("value_dist: range must lie within [0, 300]");
  }
  if (!(discount_term_share >= 0.0 && discount_term_share <= 1.0)) {
    throw ConfigError("discount_term_share: must lie in [0, 1]");
  }
  if (!(amb_mask_rate >= 0.0 && amb_mask_rate <= 1.0)) throw ConfigError("amb_mask_rate: must lie in [0, 1]");
  if (max_exponent < 1 || max_exponent > kMaxIntegerToken) throw ConfigError("max_exponent: must lie in [1, 300]");
  if (sign_ablation && remove_answers) throw ConfigError("sign_ablation and remove_answers are exclusive");
}

void to_json(nlohmann::json& j, const DistSpec& spec) {
  nlohmann::json prob;
  if (const auto* beta = std::get_if<BetaDist>(&spec.prob_dist)) {
    prob = {{"type", "beta"}, {"a", beta->a}, {"b", beta->b}};
  } else {
    prob = {{"type", "uniform01"}};
  }
  nlohmann::json value;
  if (const auto* pl = std::get_if<PowerLaw>(&spec.value_dist)) {
    value = {{"type", "power_law"}, {"exponent", pl->exponent}, {"lo", pl->lo}, {"hi", pl->hi}};
  } else {
    const auto& ur = std::get<UniformRange>(spec.value_dist);
    value = {{"type", "uniform_range"}, {"lo", ur.lo}, {"hi", ur.hi}};
  }
  j = {{"prob_dist", prob},
       {"value_dist", value},
       {"discount_term_share", spec.discount_term_share},
       {"amb_mask_rate", spec.amb_mask_rate},
       {"sign_ablation", spec.sign_ablation},
       {"remove_answers", spec.remove_answers},
       {"max_exponent", spec.max_exponent}};
}

void from_json(const nlohmann::json& j, DistSpec& spec) {
  spec = DistSpec{};
  if (j.contains("prob_dist")) {
    const auto& p = j.at("prob_dist");
    auto type = p.at("type").get<std::string>();
    if (type == "beta") {
      spec.prob_dist = BetaDist{p.at("a").get<double>(), p.at("b").get<double>()};
    } else if (type == "uniform01") {
      spec.prob_dist = Uniform01{};
    } else {
      throw ConfigError("prob_dist.type: unknown distribution '" + type + "'");
    }
  }
  if (j.contains("value_dist")) {
    const auto& v = j.at("value_dist");
    auto type = v.at("type").get<std::string>();
    if (type == "power_law") {
      spec.value_dist = PowerLaw{v.at("exponent").get<double>(), v.value("lo", 0.01), v.value("hi", 300.0)};
    } else if (type == "uniform_range") {
      spec.value_dist = UniformRange{v.value("lo", 0.0), v.value("hi", 300.0)};
    } else {
      throw ConfigError("value_dist.type: unknown distribution '" + type + "'");
    }
  }
  spec.discount_term_share = j.value("discount_term_share", spec.discount_term_share);
  spec.amb_mask_rate = j.value("amb_mask_rate", spec.amb_mask_rate);
  spec.sign_ablation = j.value("sign_ablation", spec.sign_ablation);
  spec.remove_answers = j.value("remove_answers", spec.remove_answers);
  spec.max_exponent = j.value("max_exponent", spec.max_exponent);
}

std::string Term::render() const {
  std::string base = masked ? std::string(kAmbToken) : p_or_d.magnitude_string();
  std::string val = value.magnitude_string();
  if (kind == TermKind::DiscountValue) return base + "^" + std::to_string(exponent) + "*" + val;
  return value_first ? val + "*" + base : base + "*" + val;
}

std::string EquationRecord::lhs() const {
  auto eq = rendered.find('=');
  return rendered.substr(0, eq + 1);
}

std::string EquationRecord::rhs() const {
  auto eq = rendered.find('=');
  return rendered.substr(eq + 1);
}

Decimal2 sample_probability(const DistSpec& spec, Rng& rng) {
  double p = 0.0;
  if (const auto* beta = std::get_if<BetaDist>(&spec.prob_dist)) {
    std::gamma_distribution<double> ga(beta->a, 1.0);
    std::gamma_distribution<double> gb(beta->b, 1.0);
    for (;;) {
      double x = ga(rng);
      double y = gb(rng);
      if (x + y > 0.0) {
        p = x / (x + y);
        break;
      }
    }
  } else {
    p = uniform01(rng);
  }
  return Decimal2::from_double(p);
}

Decimal2 sample_value(const DistSpec& spec, Rng& rng) {
  double u = uniform01(rng);
  double x = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  if (const auto* pl = std::get_if<PowerLaw>(&spec.value_dist)) {
    lo = pl->lo;
    hi = pl->hi;
    double k = pl->exponent + 1.0;
    if (std::abs(k) < 1e-12) {
      x = lo * std::pow(hi / lo, u);
    } else {
      double a = std::pow(lo, k);
      double b = std::pow(hi, k);
      x = std::pow(a + u * (b - a), 1.0 / k);
    }
  } else {
    const auto& ur = std::get<UniformRange>(spec.value_dist);
    lo = ur.lo;
    hi = ur.hi;
    x = lo + u * (hi - lo);
  }
  auto d = Decimal2::from_double(std::clamp(x, lo, hi));
  // Keep the rounded draw inside the support.
  auto lo_c = static_cast<std::int64_t>(std::ceil(lo * 100.0 - 1e-9));
  auto hi_c = static_cast<std::int64_t>(std::floor(hi * 100.0 + 1e-9));
  d.cents = std::clamp(d.cents, lo_c, hi_c);
  return d;
}

namespace {

struct Rational {
  mp::cpp_int num;
  mp::cpp_int den;
};

Rational term_value(const Term& t) {
  int e = t.kind == TermKind::DiscountValue ? t.exponent : 1;
  mp::cpp_int num = mp::pow(mp::cpp_int(t.p_or_d.cents), static_cast<unsigned>(e)) * t.value.cents;
  mp::cpp_int den = mp::pow(mp::cpp_int(100), static_cast<unsigned>(e + 1));
  return {num, den};
}

}  // namespace

Decimal2 exact_result(const std::array<Term, 2>& terms, Op op) {
  auto a = term_value(terms[0]);
  auto b = term_value(terms[1]);
  mp::cpp_int num = a.num * b.den + (op == Op::Plus ? 1 : -1) * b.num * a.den;
  mp::cpp_int den = a.den * b.den;
  // cents = round_half_away(100 * num / den)
  mp::cpp_int scaled = 100 * num;
  bool negative = scaled < 0;
  mp::cpp_int mag = negative ? mp::cpp_int(-scaled) : scaled;
  mp::cpp_int rounded = (2 * mag + den) / (2 * den);
  auto cents = rounded.convert_to<std::int64_t>();
  return Decimal2{negative ? -cents : cents};
}

std::string render_equation(const std::array<Term, 2>& terms, Op op, Decimal2 shown_result, bool remove_answer) {
  std::string out = terms[0].render();
  out += op == Op::Plus ? '+' : '-';
  out += terms[1].render();
  out += '=';
  if (!remove_answer) out += shown_result.signed_string();
  return out;
}

namespace {

Term sample_term(const DistSpec& spec, Rng& rng) {
  Term t;
  if (uniform01(rng) < spec.discount_term_share) {
    t.kind = TermKind::DiscountValue;
    std::uniform_int_distribution<int> exp_dist(1, spec.max_exponent);
    t.exponent = exp_dist(rng);
  }
  t.p_or_d = sample_probability(spec, rng);
  t.value = sample_value(spec, rng);
  t.masked = uniform01(rng) < spec.amb_mask_rate;
  t.value_first = t.kind == TermKind::ProbabilityValue && uniform01(rng) < 0.5;
  return t;
}

std::vector<EquationRecord> generate_chunk(const DistSpec& spec, std::size_t count, std::uint64_t seed,
                                           std::uint64_t chunk, std::size_t context_length, std::size_t& rejected) {
  Rng rng = make_rng(seed, chunk);
  const auto& vocab = Vocabulary::standard();
  std::vector<EquationRecord> out;
  out.reserve(count);
  while (out.size() < count) {
    EquationRecord rec;
    rec.op = uniform01(rng) < 0.5 ? Op::Plus : Op::Minus;
    rec.lhs_terms[0] = sample_term(spec, rng);
    rec.lhs_terms[1] = sample_term(spec, rng);
    rec.true_result = exact_result(rec.lhs_terms, rec.op);
    Decimal2 shown = rec.true_result;
    if (spec.sign_ablation && uniform01(rng) < 0.5) {
      rec.result_sign_flipped = true;
      shown.cents = -shown.cents;
    }
    rec.rendered = render_equation(rec.lhs_terms, rec.op, shown, spec.remove_answers);
    // A flipped zero renders as "-0"; the sign token is still randomized.
    if (rec.result_sign_flipped && rec.true_result.cents == 0) {
      rec.rendered = rec.lhs() + "-0";
    }
    if (token_count(rec.rendered, vocab) > context_length) {
      ++rejected;
      continue;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

Corpus generate_corpus(const DistSpec& spec, std::size_t n_equations, std::uint64_t seed,
                       std::size_t context_length) {
  spec.validate();
  if (n_equations == 0) throw ConfigError("n_equations: must be >= 1");
  std::size_t n_chunks = (n_equations + kCorpusChunkSize - 1) / kCorpusChunkSize;
  std::vector<std::vector<EquationRecord>> chunks(n_chunks);
  std::vector<std::size_t> rejected(n_chunks, 0);

  auto run = [&](std::size_t c) {
    std::size_t begin = c * kCorpusChunkSize;
    std::size_t count = std::min(kCorpusChunkSize, n_equations - begin);
    chunks[c] = generate_chunk(spec, count, seed, c, context_length, rejected[c]);
  };

  unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16u));
  if (workers == 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < n_chunks; c = next++) run(c);
      });
    }
  }

  Corpus corpus;
  corpus.records.reserve(n_equations);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    for (auto& r : chunks[c]) corpus.records.push_back(std::move(r));
    corpus.stats.rejected += rejected[c];
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open corpus file for writing: " + path.string());
  for (const auto& r : corpus.records) out << r.rendered << '\n';
  if (!out) throw IoError("failed writing corpus file: " + path.string());
}

std::vector<std::string> read_corpus_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

nlohmann::json corpus_metadata(const DistSpec& spec, std::size_t n_equations, std::uint64_t seed,
                               const CorpusStats& stats) {
  return {{"spec", spec},
          {"seed", seed},
          {"n_equations", n_equations},
          {"rejections", stats.rejected},
          {"generator_version", kGeneratorVersion}};
}

}  // namespace evcog
