#pragma once

#include <functional>
#include <vector>

namespace evcog {

struct NelderMeadOptions {
  std::size_t max_iterations = 5000;
  double size_tolerance = 1e-9;  // simplex characteristic size
  double initial_step = 0.5;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  double start_value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Derivative-free minimization (GSL nmsimplex2). Non-finite objective values
// are treated as +inf so the simplex retreats from them.
NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                             const NelderMeadOptions& options = {});

// Maps an unbounded coordinate into (lo, hi) and back.
double to_bounded(double u, double lo, double hi);
double from_bounded(double x, double lo, double hi);

}  // namespace evcog
