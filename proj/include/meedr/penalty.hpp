#pragma once

#include <cstdint>

#include <Eigen/Dense>
#include <json.hpp>

namespace meedr {

// Clipped-L1 regularizer pi(x) = lambda * min(x / tau, 1): linear with slope
// lambda/tau on [0, tau], flat at lambda beyond. Bounded, so large weights are
// not shrunk further; tau controls how aggressively small weights are pushed
// to zero.
struct PenaltySpec {
  double lambda = 0.0;
  double tau = 1e-6;

  void validate() const;  // lambda >= 0, tau > 0
  nlohmann::json to_json() const;
  static PenaltySpec from_json(const nlohmann::json& j);
};

// pi(|x|) for one coordinate.
double clipped_l1(const PenaltySpec& spec, double magnitude);

// Sum of pi(|theta_j|) over all coordinates.
double penalty_total(const PenaltySpec& spec, const Eigen::VectorXd& theta);

// Coordinatewise subgradient: (lambda/tau) * sign(theta_j) where
// 0 < |theta_j| <= tau, and 0 elsewhere (the clip point takes the inner
// slope; the origin takes 0).
Eigen::VectorXd penalty_subgradient(const PenaltySpec& spec, const Eigen::VectorXd& theta);

// Keep the `budget` largest-magnitude coordinates, zero the rest. Ties keep
// the lowest index. budget >= size is a copy; budget must be >= 0.
Eigen::VectorXd prune_to_budget(const Eigen::VectorXd& theta, std::int64_t budget);

// Sample-size rule lambda_n = (log n)^exponent / n. The supporting theory
// needs exponent > 5; 6 is the default used throughout.
double default_lambda(std::int64_t n, double exponent = 6.0);

}  // namespace meedr
