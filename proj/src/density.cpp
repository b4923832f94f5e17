#include "meedr/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "meedr/errors.hpp"
#include "meedr/quadrature.hpp"

namespace meedr {

namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727417803297364056177;  // log sqrt(2*pi)

void require_finite(double u, const char* where) {
  if (!std::isfinite(u)) {
    std::ostringstream msg;
    msg << where << ": non-finite argument " << u;
    throw std::domain_error(msg.str());
  }
}

double log_sum_exp(double a, double b) {
  double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

double ErrorDensity::density(double u) const { return std::exp(log_density(u)); }

std::vector<double> ErrorDensity::sample(Rng& rng, std::size_t count) const {
  std::vector<double> out(count);
  for (double& v : out) v = sample_one(rng);
  return out;
}

SubbotinDensity::SubbotinDensity(double shape) : r_(shape) {
  if (!(shape > 0.0) || !(shape <= 2.0)) {
    std::ostringstream msg;
    msg << "subbotin shape must lie in (0, 2], got " << shape;
    throw ConfigError(msg.str());
  }
  log_c_ = -std::numbers::ln2 - (1.0 / r_ - 1.0) * std::log(r_) - std::lgamma(1.0 / r_);
}

double SubbotinDensity::normalizer() const { return std::exp(log_c_); }

double SubbotinDensity::derivative_sup() const {
  if (r_ < 1.0) return std::numeric_limits<double>::infinity();
  if (r_ == 1.0) return normalizer();
  // |f'(u)| = C_r |u|^{r-1} exp(-|u|^r/r) peaks at |u| = (r-1)^{1/r}
  const double a = (r_ - 1.0) / r_;
  return normalizer() * std::pow(r_ - 1.0, a) * std::exp(-a);
}

double SubbotinDensity::log_density(double u) const {
  require_finite(u, "SubbotinDensity::log_density");
  if (r_ == 2.0) return log_c_ - 0.5 * u * u;
  return log_c_ - std::pow(std::abs(u), r_) / r_;
}

double SubbotinDensity::log_density_derivative(double u) const {
  require_finite(u, "SubbotinDensity::log_density_derivative");
  if (r_ == 2.0) return -u;
  // smoothed -sign(u) |u|^{r-1}
  return -u * std::pow(u * u + kScoreSmoothing * kScoreSmoothing, (r_ - 2.0) / 2.0);
}

double SubbotinDensity::sample_one(Rng& rng) const {
  double g = rng.gamma(1.0 / r_);
  return rng.sign() * std::pow(r_ * g, 1.0 / r_);
}

nlohmann::json SubbotinDensity::to_json() const {
  return {{"family", "subbotin"}, {"r", r_}};
}

ContaminatedGaussian::ContaminatedGaussian(double epsilon, double scale)
    : epsilon_(epsilon), scale_(scale) {
  if (!(epsilon >= 0.0) || !(epsilon < 1.0)) {
    throw ConfigError("contamination fraction must lie in [0, 1)");
  }
  if (!(scale > 0.0)) throw ConfigError("contamination scale must be positive");
}

double ContaminatedGaussian::log_density(double u) const {
  require_finite(u, "ContaminatedGaussian::log_density");
  double narrow = std::log1p(-epsilon_) - 0.5 * u * u - kLogSqrt2Pi;
  double wide = std::log(epsilon_) - 0.5 * (u / scale_) * (u / scale_) - kLogSqrt2Pi -
                std::log(scale_);
  if (epsilon_ == 0.0) return narrow;
  return log_sum_exp(narrow, wide);
}

double ContaminatedGaussian::log_density_derivative(double u) const {
  require_finite(u, "ContaminatedGaussian::log_density_derivative");
  if (epsilon_ == 0.0) return -u;
  double narrow = std::log1p(-epsilon_) - 0.5 * u * u - kLogSqrt2Pi;
  double wide = std::log(epsilon_) - 0.5 * (u / scale_) * (u / scale_) - kLogSqrt2Pi -
                std::log(scale_);
  double lf = log_sum_exp(narrow, wide);
  double w_narrow = std::exp(narrow - lf);
  double w_wide = std::exp(wide - lf);
  return -(w_narrow * u + w_wide * u / (scale_ * scale_));
}

double ContaminatedGaussian::sample_one(Rng& rng) const {
  bool wide = rng.uniform() < epsilon_;
  double z = rng.normal();
  return wide ? scale_ * z : z;
}

nlohmann::json ContaminatedGaussian::to_json() const {
  return {{"family", "contaminated_gaussian"}, {"epsilon", epsilon_}, {"scale", scale_}};
}

TruncatedDensity::TruncatedDensity(const ErrorDensity& base, double beta)
    : base_(base), beta_(beta) {
  if (!(beta > 0.0)) throw ConfigError("truncation level must be positive");
}

double TruncatedDensity::log_value(double u) const {
  return std::max(base_.log_density(u), std::log(beta_));
}

double TruncatedDensity::value(double u) const { return std::exp(log_value(u)); }

KernelDensityEstimate::KernelDensityEstimate(std::vector<double> residuals, double bandwidth,
                                             KernelKind kind)
    : residuals_(std::move(residuals)), bandwidth_(bandwidth), kind_(kind) {
  if (residuals_.empty()) throw ConfigError("kernel estimate needs at least one residual");
  if (!(bandwidth_ > 0.0)) throw ConfigError("kernel bandwidth must be positive");
  for (double r : residuals_) {
    if (!std::isfinite(r)) throw ConfigError("kernel estimate residuals must be finite");
  }
}

double KernelDensityEstimate::density(double v) const {
  require_finite(v, "KernelDensityEstimate::density");
  double sum = 0.0;
  if (kind_ == KernelKind::gaussian) {
    for (double x : residuals_) {
      double t = (v - x) / bandwidth_;
      sum += std::exp(-0.5 * t * t);
    }
    sum /= std::sqrt(2.0 * std::numbers::pi);
  } else {
    for (double x : residuals_) {
      double t = (v - x) / bandwidth_;
      if (std::abs(t) < 1.0) sum += 0.75 * (1.0 - t * t);
    }
  }
  return sum / (static_cast<double>(residuals_.size()) * bandwidth_);
}

double KernelDensityEstimate::log_density(double v) const {
  return std::log(std::max(density(v), kParzenFloor));
}

double KernelDensityEstimate::silverman_bandwidth(const std::vector<double>& residuals) {
  if (residuals.empty()) throw ConfigError("silverman bandwidth needs residuals");
  const double n = static_cast<double>(residuals.size());
  double mean = 0.0;
  for (double r : residuals) mean += r;
  mean /= n;
  double ss = 0.0;
  for (double r : residuals) ss += (r - mean) * (r - mean);
  double sd = residuals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  sd = std::max(sd, 1e-8);
  return 1.06 * sd * std::pow(n, -0.2);
}

double v_profile(const ErrorDensity& f, double shift, double lo, double hi) {
  auto integrand = [&](double u) {
    double weight = std::exp(f.log_density(u));
    if (weight == 0.0) return 0.0;
    return -f.log_density(u + shift) * weight;
  };
  // Geometric ladders around both kink locations (u = 0 from the weight,
  // u = -shift from the shifted log): fractional-power cusps at a piece
  // endpoint converge too slowly under plain bisection.
  std::vector<double> cuts;
  for (double center : {0.0, -shift}) {
    cuts.push_back(center);
    for (double step : {1e-12, 1e-9, 1e-6, 1e-3, 1.0}) {
      cuts.push_back(center - step);
      cuts.push_back(center + step);
    }
  }
  return integrate_split(integrand, lo, hi, std::move(cuts));
}

std::unique_ptr<ErrorDensity> density_from_json(const nlohmann::json& spec) {
  if (!spec.is_object() || !spec.contains("family")) {
    throw ConfigError("noise spec must be an object with a 'family' field");
  }
  const std::string family = spec.at("family").get<std::string>();
  try {
    if (family == "subbotin") {
      return std::make_unique<SubbotinDensity>(spec.at("r").get<double>());
    }
    if (family == "contaminated_gaussian") {
      return std::make_unique<ContaminatedGaussian>(spec.at("epsilon").get<double>(),
                                                    spec.at("scale").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad noise spec: ") + e.what());
  }
  throw ConfigError("unknown noise family: " + family);
}

}  // namespace meedr
