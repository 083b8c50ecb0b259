#pragma once

// Reference implementations used only by tests. They deliberately share no
// code with the library.

#include <algorithm>
#include <cmath>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <gmpxx.h>

namespace oracle {

// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
  double d = 0.0;
  double p = 1.0;
};

inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  double ne = na * nb / (na + nb);
  double sq = std::sqrt(ne);
  return {d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)};
}

// Exact decimal re-evaluation of a rendered equation with GMP rationals.
inline mpq_class decimal(const std::string& s) {
  auto dot = s.find('.');
  if (dot == std::string::npos) return mpq_class(mpz_class(s, 10));
  std::string digits = s.substr(0, dot) + s.substr(dot + 1);
  mpz_class den = 1;
  for (std::size_t k = dot + 1; k < s.size(); ++k) den *= 10;
  mpq_class q(mpz_class(digits, 10), den);
  q.canonicalize();
  return q;
}

inline std::optional<mpq_class> term_value(const std::string& term) {
  static const std::regex pow_re(R"(^([0-9.]+)\^([0-9]+)\*([0-9.]+)$)");
  static const std::regex mul_re(R"(^([0-9.]+)\*([0-9.]+)$)");
  std::smatch m;
  if (std::regex_match(term, m, pow_re)) {
    mpq_class base = decimal(m[1]);
    mpq_class acc = 1;
    for (int k = std::stoi(m[2]); k > 0; --k) acc *= base;
    return acc * decimal(m[3]);
  }
  if (std::regex_match(term, m, mul_re)) return decimal(m[1]) * decimal(m[2]);
  return std::nullopt;
}

// Returns the expected result string ("+7.2", "-192.93") for a rendered
// line, or nullopt when the line has masked terms or does not parse.
inline std::optional<std::string> expected_result(const std::string& line) {
  static const std::regex line_re(R"(^([0-9.^*]+)([+-])([0-9.^*]+)=([+-][0-9.]+)$)");
  std::smatch m;
  if (!std::regex_match(line, m, line_re)) return std::nullopt;
  auto a = term_value(m[1]);
  auto b = term_value(m[3]);
  if (!a || !b) return std::nullopt;
  mpq_class r = *a;
  if (m[2] == "+") r += *b;
  else r -= *b;
  mpq_class scaled = r * 100;
  bool negative = sgn(scaled) < 0;
  if (negative) scaled = -scaled;
  // Half away from zero on the magnitude.
  mpz_class cents = (scaled.get_num() * 2 + scaled.get_den()) / (scaled.get_den() * 2);
  std::string whole = mpz_class(cents / 100).get_str();
  mpz_class frac = cents % 100;
  std::string out = (negative && cents != 0 ? "-" : "+") + whole;
  if (frac != 0) {
    std::string f = frac.get_str();
    if (f.size() == 1) f = "0" + f;
    if (f.back() == '0') f.pop_back();
    out += "." + f;
  }
  return out;
}

}  // namespace oracle
