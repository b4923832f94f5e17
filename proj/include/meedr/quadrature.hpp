#pragma once

#include <functional>
#include <vector>

namespace meedr {

struct Integral {
  double value;
  double abs_error;  // estimate reported by the adaptive rule
};

// Adaptive Gauss-Kronrod integration of f over [lo, hi]; the bounds may be
// +/-infinity. Throws NumericError with interval diagnostics when the error
// estimate does not reach abs_tol.
Integral integrate(const std::function<double(double)>& f, double lo, double hi,
                   double abs_tol = 1e-10, int max_depth = 15);

// Same, but the interval is cut at the given interior breakpoints first so
// that integrand kinks (e.g. |u|^r at u = 0) land on piece boundaries.
// Breakpoints outside (lo, hi) are ignored.
double integrate_split(const std::function<double(double)>& f, double lo, double hi,
                       std::vector<double> breakpoints, double abs_tol = 1e-10);

}  // namespace meedr
