#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "meedr/density.hpp"
#include "meedr/errors.hpp"
#include "meedr/quadrature.hpp"
#include "meedr/rng.hpp"

using namespace meedr;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Breakpoint ladder for integrands with a cusp or kink at 0: geometric zoom
// so the adaptive rule never has to discover the feature on its own.
std::vector<double> origin_ladder() {
  return {0.0, -1e-12, 1e-12, -1e-9, 1e-9, -1e-6, 1e-6, -1e-3, 1e-3, -1.0, 1.0};
}

double normalization(const SubbotinDensity& f) {
  return integrate_split([&](double u) { return f.density(u); }, -kInf, kInf, origin_ladder());
}

// Golden-section maximizer, used as the independent oracle for sup |f'|.
double maximize(const std::function<double(double)>& g, double lo, double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  while (b - a > 1e-12) {
    if (g(c) > g(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return g(0.5 * (a + b));
}

double abs_density_slope(const SubbotinDensity& f, double u) {
  return std::abs(f.log_density_derivative(u)) * f.density(u);
}

}  // namespace

TEST_CASE("normalizing constant closed forms") {
  SubbotinDensity gauss(2.0);
  CHECK(gauss.normalizer() == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-12));
  SubbotinDensity laplace(1.0);
  CHECK(laplace.normalizer() == doctest::Approx(0.5).epsilon(1e-12));
  // r = 1/2: log C = -log2 - (2 - 1) log(1/2) - log Gamma(2) = 0
  SubbotinDensity heavy(0.5);
  CHECK(heavy.normalizer() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("density integrates to one") {
  for (double r : {0.5, 1.0, 1.5, 2.0}) {
    CAPTURE(r);
    SubbotinDensity f(r);
    CHECK(normalization(f) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("shape parameter is validated") {
  CHECK_THROWS_AS(SubbotinDensity(0.0), ConfigError);
  CHECK_THROWS_AS(SubbotinDensity(-1.0), ConfigError);
  CHECK_THROWS_AS(SubbotinDensity(2.5), ConfigError);
  CHECK_THROWS_AS(SubbotinDensity(std::numeric_limits<double>::quiet_NaN()), ConfigError);
}

TEST_CASE("log density values") {
  SubbotinDensity gauss(2.0);
  CHECK(gauss.log_density(0.0) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  SubbotinDensity laplace(1.0);
  CHECK(laplace.log_density(0.0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  // r = 1.5 at u = 1.2 against a quadrature-derived normalizer.
  SubbotinDensity f(1.5);
  const double mass = integrate_split([](double u) { return std::exp(-std::pow(std::abs(u), 1.5) / 1.5); },
                                      -kInf, kInf, origin_ladder());
  const double oracle = std::log(1.0 / mass) - std::pow(1.2, 1.5) / 1.5;
  CHECK(f.log_density(1.2) == doctest::Approx(oracle).epsilon(1e-8));
}

TEST_CASE("log density is symmetric bit for bit") {
  for (double r : {0.5, 1.0, 1.5, 2.0}) {
    SubbotinDensity f(r);
    for (double u : {0.0, 0.3, 1.0, 2.7, 17.0}) {
      CHECK(f.log_density(u) == f.log_density(-u));
    }
  }
}

TEST_CASE("score matches finite differences away from the origin") {
  Rng rng(31);
  const double h = 1e-5;
  for (double r : {1.0, 1.5, 2.0}) {
    CAPTURE(r);
    SubbotinDensity f(r);
    for (int i = 0; i < 100; ++i) {
      double u = rng.uniform_range(-4.0, 4.0);
      if (std::abs(u) < 0.05) u = u < 0 ? u - 0.05 : u + 0.05;
      const double fd = (f.log_density(u + h) - f.log_density(u - h)) / (2.0 * h);
      const double got = f.log_density_derivative(u);
      CHECK(std::abs(got - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("score closed-form spot values") {
  SubbotinDensity gauss(2.0);
  CHECK(gauss.log_density_derivative(0.7) == -0.7);  // exact branch, no smoothing
  CHECK(gauss.log_density_derivative(0.0) == 0.0);
  SubbotinDensity laplace(1.0);
  CHECK(laplace.log_density_derivative(-3.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(laplace.log_density_derivative(2.0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("non-finite arguments are rejected") {
  SubbotinDensity f(1.5);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(f.log_density(nan), std::domain_error);
  CHECK_THROWS_AS(f.log_density(kInf), std::domain_error);
  CHECK_THROWS_AS(f.log_density_derivative(-kInf), std::domain_error);
  ContaminatedGaussian cg(0.05, 10.0);
  CHECK_THROWS_AS(cg.log_density(nan), std::domain_error);
  CHECK_THROWS_AS(cg.log_density_derivative(kInf), std::domain_error);
}

TEST_CASE("sampling moments match the family") {
  SUBCASE("gaussian variance") {
    SubbotinDensity f(2.0);
    Rng rng(101);
    double s1 = 0.0, s2 = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double u = f.sample_one(rng);
      s1 += u;
      s2 += u * u;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    CHECK(var > 0.99);
    CHECK(var < 1.01);
  }
  SUBCASE("laplace variance") {
    SubbotinDensity f(1.0);
    Rng rng(102);
    double s2 = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double u = f.sample_one(rng);
      s2 += u * u;
    }
    // Var = 2; fourth moment 24 gives SE(sample var) = sqrt(20/n).
    CHECK(std::abs(s2 / n - 2.0) <= 3.0 * std::sqrt(20.0 / n));
  }
  SUBCASE("intermediate shape variance") {
    const double r = 1.5;
    SubbotinDensity f(r);
    Rng rng(103);
    double s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double u = f.sample_one(rng);
      s2 += u * u;
    }
    const double theory = std::pow(r, 2.0 / r) * std::tgamma(3.0 / r) / std::tgamma(1.0 / r);
    CHECK(s2 / n == doctest::Approx(theory).epsilon(0.02));
  }
}

TEST_CASE("sample distribution passes a goodness-of-fit screen") {
  // Kolmogorov-Smirnov at shape 1.5 with 1e5 draws. CDF oracle by the change
  // of variables t = u^r / r: P(0 < U <= x) = P(1/r, x^r / r) / 2 with P the
  // regularized lower incomplete gamma. Quadrature anchors it at spot points.
  const double r = 1.5;
  const SubbotinDensity f(r);
  auto cdf = [r](double x) {
    const double p = boost::math::gamma_p(1.0 / r, std::pow(std::abs(x), r) / r);
    return 0.5 * (1.0 + (x < 0.0 ? -p : p));
  };
  for (double x : {-4.0, -2.0, -0.5, 0.0, 0.3, 1.0, 2.5, 5.0}) {
    const double spot =
        integrate_split([&](double u) { return f.density(u); }, -kInf, x, {0.0});
    CHECK(cdf(x) == doctest::Approx(spot).epsilon(1e-9));
  }

  Rng rng(104);
  const int n = 100000;
  std::vector<double> draws(n);
  for (double& v : draws) v = f.sample_one(rng);
  std::sort(draws.begin(), draws.end());

  double d_stat = 0.0;
  for (int i = 0; i < n; ++i) {
    const double c = cdf(draws[i]);
    d_stat = std::max({d_stat, std::abs(c - static_cast<double>(i) / n),
                       std::abs(c - static_cast<double>(i + 1) / n)});
  }
  // 1% critical value 1.628/sqrt(n).
  CHECK(d_stat < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sample() returns the requested count") {
  SubbotinDensity f(1.0);
  Rng rng(7);
  CHECK(f.sample(rng, 0).empty());
  CHECK(f.sample(rng, 17).size() == 17);
}

TEST_CASE("slope bound closed form agrees with direct maximization") {
  for (double r : {1.0, 1.3, 1.5, 2.0}) {
    CAPTURE(r);
    SubbotinDensity f(r);
    const double oracle = r == 1.0
                              ? f.normalizer()  // attained in the limit u -> 0+
                              : maximize([&](double u) { return abs_density_slope(f, u); }, 1e-9, 6.0);
    CHECK(f.derivative_sup() == doctest::Approx(oracle).epsilon(1e-9));
  }
  CHECK(SubbotinDensity(0.5).derivative_sup() == kInf);
}

TEST_CASE("floored log density is lipschitz with the predicted constant") {
  const SubbotinDensity gauss(2.0);
  // Independent oracle for sup |f'|: golden-section on |u| phi(u).
  const double k_f = maximize([&](double u) { return abs_density_slope(gauss, u); }, 1e-9, 6.0);
  CHECK(k_f == doctest::Approx(0.2419707245191434).epsilon(1e-10));

  for (double beta : {1e-1, 1e-3}) {
    CAPTURE(beta);
    TruncatedDensity t(gauss, beta);
    Rng rng(105);
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const double u1 = rng.uniform_range(-5.0, 5.0);
      const double u2 = rng.uniform_range(-5.0, 5.0);
      const double lhs = std::abs(t.log_value(u1) - t.log_value(u2));
      if (lhs > (k_f / beta) * std::abs(u1 - u2) * (1.0 + 1e-12) + 1e-15) ++violations;
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("truncation floor engages in the tail") {
  const SubbotinDensity gauss(2.0);
  TruncatedDensity t(gauss, 0.1);
  CHECK(t.log_value(10.0) == doctest::Approx(std::log(0.1)).epsilon(1e-12));
  CHECK(t.log_value(10.0) - t.log_value(12.0) == 0.0);
  CHECK(t.log_value(0.0) == gauss.log_density(0.0));  // above the floor, untouched
  CHECK(t.value(10.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(TruncatedDensity(gauss, 0.0), ConfigError);
  CHECK_THROWS_AS(TruncatedDensity(gauss, -0.5), ConfigError);
}

TEST_CASE("cross entropy profile closed forms") {
  const SubbotinDensity gauss(2.0);
  const double v0 = v_profile(gauss, 0.0);
  CHECK(v0 == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e)).epsilon(1e-9));
  CHECK(v_profile(gauss, 1.0) - v0 == doctest::Approx(0.5).epsilon(1e-6));
  const SubbotinDensity laplace(1.0);
  CHECK(v_profile(laplace, 0.0) == doctest::Approx(1.0 + std::numbers::ln2).epsilon(1e-9));
}

TEST_CASE("cross entropy profile is minimized at zero shift") {
  for (double r : {1.0, 1.5, 2.0}) {
    CAPTURE(r);
    SubbotinDensity f(r);
    const double v0 = v_profile(f, 0.0);
    for (int i = 0; i <= 60; ++i) {
      const double s = -3.0 + 0.1 * i;
      CHECK(v_profile(f, s) - v0 >= -1e-8);
    }
  }
}

TEST_CASE("shifted moment bound holds under the residual law") {
  // E |xi + delta|^r - E |xi|^r <= |delta|^r for every shift.
  for (double r : {1.0, 1.5, 2.0}) {
    SubbotinDensity f(r);
    for (double delta : {0.1, 0.5, 1.0}) {
      CAPTURE(r);
      CAPTURE(delta);
      const double gap = integrate_split(
          [&](double u) {
            return (std::pow(std::abs(u + delta), r) - std::pow(std::abs(u), r)) * f.density(u);
          },
          -kInf, kInf, {-delta, 0.0});
      CHECK(gap <= std::pow(delta, r) + 1e-8);
    }
  }
}

TEST_CASE("deep-tail truncation events stay rare") {
  // With beta_n = n^{-p}, p = 2^r + 1, the mass of {f(xi + U) <= beta_n} is so
  // deep in the tail that the clipped log-loss contribution stays below
  // 10 log(n)/n. |U| <= 2 models a bounded regression gap.
  Rng rng(106);
  for (double r : {1.0, 2.0}) {
    SubbotinDensity f(r);
    const double p = std::pow(2.0, r) + 1.0;
    for (double n : {1e3, 1e4}) {
      CAPTURE(r);
      CAPTURE(n);
      const double log_beta = -p * std::log(n);
      double acc = 0.0;
      const int draws = 1000000;
      for (int i = 0; i < draws; ++i) {
        const double xi = f.sample_one(rng);
        const double u = rng.uniform_range(-2.0, 2.0);
        const double lf = f.log_density(xi + u);
        if (lf <= log_beta) acc += std::abs(lf);
      }
      CHECK(acc / draws <= 10.0 * std::log(n) / n);
    }
  }
}

TEST_CASE("kernel estimate values") {
  SUBCASE("single residual at the query point") {
    for (double b : {0.3, 1.0, 2.5}) {
      KernelDensityEstimate kde({0.7}, b);
      CHECK(kde.log_density(0.7) ==
            doctest::Approx(std::log(1.0 / (b * std::sqrt(2.0 * std::numbers::pi)))).epsilon(1e-12));
    }
  }
  SUBCASE("two residuals, hand evaluation") {
    KernelDensityEstimate kde({0.0, 2.0}, 1.0);
    const double phi1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
    CHECK(kde.density(1.0) == doctest::Approx(phi1).epsilon(1e-12));
    CHECK(kde.log_density(1.0) == doctest::Approx(std::log(phi1)).epsilon(1e-12));
  }
  SUBCASE("floor far from the sample") {
    KernelDensityEstimate kde({0.0, 2.0}, 0.5);
    CHECK(kde.log_density(1e4) == doctest::Approx(std::log(1e-12)).epsilon(1e-12));
    CHECK(kde.density(1e4) == 0.0);  // raw value underflows, floor only inside log
  }
}

TEST_CASE("kernel estimate integrates to one") {
  const std::vector<double> residuals = {-0.3, 0.4, 1.1, 2.0};
  for (KernelKind kind : {KernelKind::gaussian, KernelKind::epanechnikov}) {
    const double b = 0.8;
    KernelDensityEstimate kde(residuals, b, kind);
    std::vector<double> cuts;
    for (double x : residuals) {
      cuts.push_back(x - b);
      cuts.push_back(x + b);
    }
    const double lo = -0.3 - 6.0 * b;
    const double hi = 2.0 + 6.0 * b;
    const double mass = integrate_split([&](double v) { return kde.density(v); }, lo, hi, cuts);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("kernel estimate is nonnegative and validated") {
  CHECK_THROWS_AS(KernelDensityEstimate({}, 1.0), ConfigError);
  CHECK_THROWS_AS(KernelDensityEstimate({1.0}, 0.0), ConfigError);
  CHECK_THROWS_AS(KernelDensityEstimate({std::numeric_limits<double>::quiet_NaN()}, 1.0), ConfigError);
  KernelDensityEstimate kde({-1.0, 0.0, 1.0}, 0.4, KernelKind::epanechnikov);
  for (double v = -3.0; v <= 3.0; v += 0.05) CHECK(kde.density(v) >= 0.0);
  CHECK(kde.density(2.0) == 0.0);  // outside the compact support
}

TEST_CASE("bandwidth rule") {
  // 1.06 * sd * n^{-1/5} with the (n-1)-denominator deviation.
  const std::vector<double> sample = {0.0, 1.0, 2.0, 3.0, 4.0};
  const double sd = std::sqrt(2.5);
  CHECK(KernelDensityEstimate::silverman_bandwidth(sample) ==
        doctest::Approx(1.06 * sd * std::pow(5.0, -0.2)).epsilon(1e-12));
  // Degenerate sample floors the deviation instead of returning zero.
  CHECK(KernelDensityEstimate::silverman_bandwidth({1.0, 1.0, 1.0}) ==
        doctest::Approx(1.06 * 1e-8 * std::pow(3.0, -0.2)).epsilon(1e-12));
  CHECK_THROWS_AS(KernelDensityEstimate::silverman_bandwidth({}), ConfigError);
}

TEST_CASE("contaminated gaussian density and sampling") {
  ContaminatedGaussian cg(0.05, 10.0);
  const double log_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double hand0 = std::log(0.95 * std::exp(-log_sqrt_2pi) + 0.05 * std::exp(-log_sqrt_2pi) / 10.0);
  CHECK(cg.log_density(0.0) == doctest::Approx(hand0).epsilon(1e-12));

  const double h = 1e-6;
  for (double u : {-3.0, -0.4, 0.9, 6.0}) {
    const double fd = (cg.log_density(u + h) - cg.log_density(u - h)) / (2.0 * h);
    CHECK(cg.log_density_derivative(u) == doctest::Approx(fd).epsilon(1e-6));
  }

  Rng rng(107);
  double s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = cg.sample_one(rng);
    s2 += u * u;
  }
  CHECK(s2 / n == doctest::Approx(0.95 + 0.05 * 100.0).epsilon(0.06));

  CHECK_THROWS_AS(ContaminatedGaussian(1.0, 10.0), ConfigError);
  CHECK_THROWS_AS(ContaminatedGaussian(-0.1, 10.0), ConfigError);
  CHECK_THROWS_AS(ContaminatedGaussian(0.05, 0.0), ConfigError);
}

TEST_CASE("noise specs round-trip through json") {
  auto f = density_from_json({{"family", "subbotin"}, {"r", 1.5}});
  CHECK(f->to_json().at("r").get<double>() == 1.5);
  CHECK(f->log_density(0.4) == SubbotinDensity(1.5).log_density(0.4));

  auto cg = density_from_json({{"family", "contaminated_gaussian"}, {"epsilon", 0.05}, {"scale", 10.0}});
  CHECK(cg->to_json().at("scale").get<double>() == 10.0);

  CHECK_THROWS_AS(density_from_json({{"family", "cauchy"}}), ConfigError);
  CHECK_THROWS_AS(density_from_json({{"r", 2.0}}), ConfigError);
  CHECK_THROWS_AS(density_from_json({{"family", "subbotin"}}), ConfigError);
  CHECK_THROWS_AS(density_from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("quadrature reports non-convergence with diagnostics") {
  // A square-root cusp defeats fixed-depth refinement when no breakpoint
  // marks it; the failure must carry the interval and the estimates.
  const SubbotinDensity heavy(0.5);
  try {
    integrate([&](double u) { return heavy.density(u); }, -50.0, 0.0);
    FAIL("expected non-convergence");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("quadrature did not converge") != std::string::npos);
    CHECK(msg.find("value=") != std::string::npos);
    CHECK(msg.find("abs_tol=") != std::string::npos);
  }
}
