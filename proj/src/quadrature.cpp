#include "meedr/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "meedr/errors.hpp"

namespace meedr {

Integral integrate(const std::function<double(double)>& f, double lo, double hi,
                   double abs_tol, int max_depth) {
  using rule = boost::math::quadrature::gauss_kronrod<double, 15>;
  double error = 0.0;
  double value = rule::integrate(f, lo, hi, max_depth, 1e-12, &error);
  if (!std::isfinite(value) || !(error <= std::max(abs_tol, 1e-14 * std::abs(value)))) {
    std::ostringstream msg;
    msg << "quadrature did not converge on [" << lo << ", " << hi
        << "]: value=" << value << " error_estimate=" << error
        << " abs_tol=" << abs_tol;
    throw NumericError(msg.str());
  }
  return {value, error};
}

double integrate_split(const std::function<double(double)>& f, double lo, double hi,
                       std::vector<double> breakpoints, double abs_tol) {
  std::vector<double> cuts;
  cuts.push_back(lo);
  std::sort(breakpoints.begin(), breakpoints.end());
  for (double b : breakpoints) {
    if (b > lo && b < hi && (cuts.empty() || b != cuts.back())) cuts.push_back(b);
  }
  cuts.push_back(hi);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    total += integrate(f, cuts[i], cuts[i + 1], abs_tol).value;
  }
  return total;
}

}  // namespace meedr
