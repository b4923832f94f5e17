#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "meedr/data.hpp"
#include "meedr/density.hpp"
#include "meedr/network.hpp"
#include "meedr/penalty.hpp"
#include "meedr/train.hpp"

namespace meedr {

inline constexpr const char* kLibraryVersion = "0.1.0";

using Predictor = std::function<double(const Eigen::VectorXd&)>;

Predictor network_predictor(const Network& net);  // copies the net
Predictor truth_predictor(const TruthFunction& truth);

struct ExcessEstimate {
  double value;
  double std_error;
};

// Monte Carlo estimate of the entropy risk gap between predictor and truth:
// mean over draws of -log f(g(X) + xi - h(X)) + log f(xi), with the *same*
// xi in both terms, X cycling through the eval_inputs rows. The pairing makes
// the estimate exactly zero when h equals g. Needs >= 100 eval rows.
ExcessEstimate excess_risk_mc(const Predictor& predictor, const Predictor& truth,
                              const ErrorDensity& f, const Eigen::MatrixXd& eval_inputs,
                              std::int64_t draws, std::uint64_t seed);

// Mean of (h(X) - g(X))^2 over the eval rows; the noiseless accuracy metric.
double mean_squared_gap(const Predictor& predictor, const Predictor& truth,
                        const Eigen::MatrixXd& eval_inputs);

// Straight-line fit of log(values) against log(ns); returns the slope, or
// NaN when any value is not positive. Used to read decay rates off
// excess-risk curves.
double fit_loglog_slope(const std::vector<std::int64_t>& ns, const std::vector<double>& values);

// One excess-risk-versus-n sweep: for each (n, seed) cell a fresh chain is
// generated, the chosen estimator is fitted with the architecture rule
// applied at that n (weight bound capped at weight_bound_cap), and the excess
// risk is estimated by Monte Carlo. Cell seeds derive from (master seed, n,
// seed index), so results do not depend on scheduling.
struct RateStudyConfig {
  GeneratorSpec generator;
  RateSpec rate;
  std::string estimator = "npdnn";  // npdnn | spdnn | kmee | ls | mean | oracle
  std::vector<std::int64_t> ns = {512, 1024, 2048, 4096, 8192};
  int seeds = 10;
  TrainConfig train;
  double penalty_lambda = -1.0;  // negative: (log n)^lambda_exponent / n rule
  double penalty_tau = 1e-6;
  double lambda_exponent = 6.0;
  double weight_bound_cap = 1e3;
  double output_bound = 10.0;
  std::int64_t mc_draws = 200000;
  std::int64_t eval_count = 4096;
  double bandwidth = 0.0;  // kmee; <= 0 selects Silverman's rule
  int threads = 1;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static RateStudyConfig from_json(const nlohmann::json& j);
};

struct RateCell {
  std::int64_t n;
  int seed_index;
  double excess;
  double std_error;
  double test_mse;
  bool diverged;
};

struct RateStudyResult {
  std::vector<RateCell> cells;      // ns-major, seed-minor
  std::vector<std::int64_t> ns;
  std::vector<double> mean_excess;  // per n, over all seeds
  std::vector<double> sd_excess;
  double slope;             // NaN when degenerate
  double theory_exponent;   // positive kappa*s/(kappa*s+d); theory slope is -exponent
  bool degenerate;          // some mean excess <= 1e-12, log-log fit meaningless
};

RateStudyResult rate_study(const RateStudyConfig& config);

void write_rate_study_csv(const RateStudyResult& result, const RateStudyConfig& config,
                          const std::filesystem::path& path);

// Paired comparison of the entropy fit (under model_noise) against the
// squared-error fit on the same data, same architecture, same optimizer
// seeds; scores are noiseless test MSE on fresh inputs.
struct CompareConfig {
  GeneratorSpec generator;
  nlohmann::json model_noise = {{"family", "subbotin"}, {"r", 1.0}};
  std::int64_t n = 2048;
  int seeds = 10;
  Architecture arch;
  TrainConfig train;
  std::int64_t eval_count = 20000;
  int threads = 1;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static CompareConfig from_json(const nlohmann::json& j);
};

struct CompareRow {
  int seed_index;
  double entropy_mse;
  double ls_mse;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  double entropy_wins;  // count of rows with entropy_mse < ls_mse; ties add 0.5
  double median_entropy_mse;
  double median_ls_mse;
};

CompareResult robustness_compare(const CompareConfig& config);

void write_compare_csv(const CompareResult& result, const CompareConfig& config,
                       const std::filesystem::path& path);

}  // namespace meedr
