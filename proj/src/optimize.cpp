#include "evcog/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "evcog/errors.hpp"

namespace evcog {

namespace {

struct Objective {
  const std::function<double(const std::vector<double>&)>* f;
  std::vector<double> buffer;
};

double trampoline(const gsl_vector* v, void* params) {
  auto* obj = static_cast<Objective*>(params);
  for (std::size_t i = 0; i < obj->buffer.size(); ++i) obj->buffer[i] = gsl_vector_get(v, i);
  double y = (*obj->f)(obj->buffer);
  return std::isfinite(y) ? y : std::numeric_limits<double>::max();
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                             const NelderMeadOptions& options) {
  const std::size_t n = x0.size();
  if (n == 0) throw DimensionError("nelder_mead: empty parameter vector");
  gsl_set_error_handler_off();
  Objective obj{&f, std::vector<double>(n)};
  gsl_multimin_function fn{&trampoline, n, &obj};

  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* step = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, x0[i]);
    gsl_vector_set(step, i, options.initial_step);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  NelderMeadResult result;
  result.start_value = trampoline(x, &obj);
  gsl_multimin_fminimizer_set(s, &fn, x, step);
  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), options.size_tolerance) == GSL_SUCCESS) {
      result.converged = true;
      ++result.iterations;
      break;
    }
  }
  result.x.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.x[i] = gsl_vector_get(s->x, i);
  result.value = s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return result;
}

double to_bounded(double u, double lo, double hi) {
  const double s = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
  return lo + (hi - lo) * s;
}

double from_bounded(double x, double lo, double hi) {
  double s = (x - lo) / (hi - lo);
  s = std::clamp(s, 1e-12, 1.0 - 1e-12);
  return std::log(s / (1.0 - s));
}

}  // namespace evcog
