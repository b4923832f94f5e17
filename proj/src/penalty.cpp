#include "meedr/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "meedr/errors.hpp"

namespace meedr {

void PenaltySpec::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("penalty lambda must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("penalty tau must be > 0");
}

nlohmann::json PenaltySpec::to_json() const {
  return {{"lambda", lambda}, {"tau", tau}};
}

PenaltySpec PenaltySpec::from_json(const nlohmann::json& j) {
  PenaltySpec spec;
  if (j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
  if (j.contains("tau")) spec.tau = j.at("tau").get<double>();
  spec.validate();
  return spec;
}

double clipped_l1(const PenaltySpec& spec, double magnitude) {
  return spec.lambda * std::min(magnitude / spec.tau, 1.0);
}

double penalty_total(const PenaltySpec& spec, const Eigen::VectorXd& theta) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    total += clipped_l1(spec, std::abs(theta[j]));
  }
  return total;
}

Eigen::VectorXd penalty_subgradient(const PenaltySpec& spec, const Eigen::VectorXd& theta) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  const double slope = spec.lambda / spec.tau;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    double a = std::abs(theta[j]);
    if (a > 0.0 && a <= spec.tau) {
      g[j] = theta[j] > 0.0 ? slope : -slope;
    }
  }
  return g;
}

Eigen::VectorXd prune_to_budget(const Eigen::VectorXd& theta, std::int64_t budget) {
  if (budget < 0) throw ConfigError("sparsity budget must be >= 0");
  if (budget >= theta.size()) return theta;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(theta.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    double ma = std::abs(theta[a]);
    double mb = std::abs(theta[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  for (std::int64_t k = 0; k < budget; ++k) {
    Eigen::Index j = order[static_cast<std::size_t>(k)];
    out[j] = theta[j];
  }
  return out;
}

double default_lambda(std::int64_t n, double exponent) {
  if (n < 2) throw ConfigError("lambda rule needs n >= 2");
  if (!(exponent > 5.0)) throw ConfigError("lambda rule exponent must exceed 5");
  double ln = std::log(static_cast<double>(n));
  return std::pow(ln, exponent) / static_cast<double>(n);
}

}  // namespace meedr
