#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "meedr/rng.hpp"

namespace meedr {

// Gradient smoothing scale for |u|^{r-1} kinks: log_density_derivative of the
// Subbotin family uses -u * (u^2 + eps^2)^{(r-2)/2} for r < 2 so optimizers
// never see an infinite slope at u = 0. Density *values* are exact.
inline constexpr double kScoreSmoothing = 1e-8;

// Floor applied inside log() of Parzen plug-in estimates.
inline constexpr double kParzenFloor = 1e-12;

// A symmetric error density on the real line. log_density and
// log_density_derivative throw std::domain_error on non-finite input.
class ErrorDensity {
 public:
  virtual ~ErrorDensity() = default;

  virtual double log_density(double u) const = 0;
  // d/du log f(u); possibly smoothed near kinks, see kScoreSmoothing.
  virtual double log_density_derivative(double u) const = 0;
  virtual double sample_one(Rng& rng) const = 0;
  virtual nlohmann::json to_json() const = 0;

  double density(double u) const;
  std::vector<double> sample(Rng& rng, std::size_t count) const;
};

// Exponential-power family f(u) = C_r exp(-|u|^r / r) with shape r in (0, 2].
// r = 1 is Laplace, r = 2 is standard Gaussian. For r = 2 the derivative is
// computed as exactly -u (no smoothing, no pow), so a squared-error fit and a
// Gaussian entropy fit follow bit-identical gradient paths.
class SubbotinDensity final : public ErrorDensity {
 public:
  explicit SubbotinDensity(double shape);

  double shape() const { return r_; }
  // log C_r = -log 2 - (1/r - 1) log r - log Gamma(1/r)
  double log_normalizer() const { return log_c_; }
  double normalizer() const;

  // sup_u |f'(u)|: closed form C_r (r-1)^{(r-1)/r} e^{-(r-1)/r} for r > 1,
  // C_1 for r = 1 (attained as u -> 0), +infinity for r < 1.
  double derivative_sup() const;

  double log_density(double u) const override;
  double log_density_derivative(double u) const override;
  // Exact draw: |U| = (r G)^{1/r} with G ~ Gamma(1/r, 1), random sign.
  double sample_one(Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  double r_;
  double log_c_;
};

// Two-component scale mixture (1-eps) N(0,1) + eps N(0, scale^2); the heavy
// tail model used in robustness comparisons.
class ContaminatedGaussian final : public ErrorDensity {
 public:
  ContaminatedGaussian(double epsilon, double scale);

  double epsilon() const { return epsilon_; }
  double scale() const { return scale_; }

  double log_density(double u) const override;
  double log_density_derivative(double u) const override;
  double sample_one(Rng& rng) const override;
  nlohmann::json to_json() const override;

 private:
  double epsilon_;
  double scale_;
};

// Truncation from below: T_beta f = max(f, beta). Keeps -log f bounded on
// regions where the density underflows. Holds a reference; the base density
// must outlive this object.
class TruncatedDensity {
 public:
  TruncatedDensity(const ErrorDensity& base, double beta);

  double beta() const { return beta_; }
  const ErrorDensity& base() const { return base_; }

  double value(double u) const;
  double log_value(double u) const;

 private:
  const ErrorDensity& base_;
  double beta_;
};

enum class KernelKind { gaussian, epanechnikov };

// Parzen window estimate built from a residual sample. log_density floors the
// estimate at kParzenFloor so the entropy objective stays finite.
class KernelDensityEstimate {
 public:
  KernelDensityEstimate(std::vector<double> residuals, double bandwidth,
                        KernelKind kind = KernelKind::gaussian);

  double bandwidth() const { return bandwidth_; }
  KernelKind kind() const { return kind_; }
  const std::vector<double>& residuals() const { return residuals_; }

  double density(double v) const;      // raw estimate, not floored
  double log_density(double v) const;  // log(max(density, kParzenFloor))

  // 1.06 * sd * n^{-1/5}; sd is the (n-1)-denominator sample deviation,
  // floored at 1e-8 to stay positive on degenerate samples.
  static double silverman_bandwidth(const std::vector<double>& residuals);

 private:
  std::vector<double> residuals_;
  double bandwidth_;
  KernelKind kind_;
};

// Cross-entropy profile V(s) = integral of -log f(u + s) * f(u) du, the
// population risk of a predictor whose error is offset by s. Minimized at
// s = 0 for symmetric unimodal f. Quadrature window [-50, 50] is adequate
// for shapes r >= 1; pass wider bounds for heavier tails.
double v_profile(const ErrorDensity& f, double shift, double lo = -50.0, double hi = 50.0);

std::unique_ptr<ErrorDensity> density_from_json(const nlohmann::json& spec);

}  // namespace meedr
