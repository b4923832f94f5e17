#include "meedr/risk.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "meedr/errors.hpp"
#include "meedr/rng.hpp"

namespace meedr {

namespace {

// Runs fn(0..count-1) on up to `threads` workers. Work items must be
// independent; item index, not scheduling, determines all randomness.
void run_indexed(std::int64_t count, int threads, const std::function<void(std::int64_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int worker_count = static_cast<int>(std::min<std::int64_t>(threads, count));
  pool.reserve(static_cast<std::size_t>(worker_count));
  for (int t = 0; t < worker_count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

char* format_g17(char* buf, std::size_t size, double v) {
  std::snprintf(buf, size, "%.17g", v);
  return buf;
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

Predictor network_predictor(const Network& net) {
  return [net](const Eigen::VectorXd& x) { return net.forward(x); };
}

Predictor truth_predictor(const TruthFunction& truth) {
  return [truth](const Eigen::VectorXd& x) { return truth(x); };
}

ExcessEstimate excess_risk_mc(const Predictor& predictor, const Predictor& truth,
                              const ErrorDensity& f, const Eigen::MatrixXd& eval_inputs,
                              std::int64_t draws, std::uint64_t seed) {
  const std::int64_t k = eval_inputs.rows();
  if (k < 100) throw ConfigError("excess risk needs at least 100 eval inputs");
  if (draws < 1) throw ConfigError("excess risk needs at least one draw");

  Eigen::VectorXd pred(k);
  Eigen::VectorXd target(k);
  for (std::int64_t i = 0; i < k; ++i) {
    const Eigen::VectorXd x = eval_inputs.row(i).transpose();
    pred(i) = predictor(x);
    target(i) = truth(x);
  }

  Rng rng(seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::int64_t j = 0; j < draws; ++j) {
    const std::int64_t i = j % k;
    const double xi = f.sample_one(rng);
    const double term = -f.log_density(target(i) + xi - pred(i)) + f.log_density(xi);
    const double delta = term - mean;
    mean += delta / static_cast<double>(j + 1);
    m2 += delta * (term - mean);
  }
  const double dn = static_cast<double>(draws);
  const double variance = draws > 1 ? m2 / (dn - 1.0) : 0.0;
  return {mean, std::sqrt(variance / dn)};
}

double mean_squared_gap(const Predictor& predictor, const Predictor& truth,
                        const Eigen::MatrixXd& eval_inputs) {
  const std::int64_t k = eval_inputs.rows();
  if (k < 1) throw ConfigError("mean squared gap needs eval inputs");
  double total = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    const Eigen::VectorXd x = eval_inputs.row(i).transpose();
    const double d = predictor(x) - truth(x);
    total += d * d;
  }
  return total / static_cast<double>(k);
}

double fit_loglog_slope(const std::vector<std::int64_t>& ns, const std::vector<double>& values) {
  if (ns.size() != values.size() || ns.size() < 2) {
    throw ConfigError("slope fit needs matching lists with at least two points");
  }
  const std::size_t k = ns.size();
  for (double v : values) {
    if (!(v > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double x = std::log(static_cast<double>(ns[i]));
    const double y = std::log(values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dk = static_cast<double>(k);
  const double denom = dk * sxx - sx * sx;
  if (denom == 0.0) throw ConfigError("slope fit needs at least two distinct n");
  return (dk * sxy - sx * sy) / denom;
}

void RateStudyConfig::validate() const {
  generator.validate();
  rate.validate();
  train.validate();
  if (rate.input_dim != generator.input_dim) {
    throw ConfigError("rate spec input_dim must match the generator");
  }
  static const char* kEstimators[] = {"npdnn", "spdnn", "kmee", "ls", "mean", "oracle"};
  if (std::find_if(std::begin(kEstimators), std::end(kEstimators),
                   [&](const char* e) { return estimator == e; }) == std::end(kEstimators)) {
    throw ConfigError("unknown estimator: " + estimator);
  }
  if (ns.size() < 2) throw ConfigError("rate study needs at least two sample sizes");
  for (std::int64_t n : ns) {
    if (n < 2) throw ConfigError("rate study sample sizes must be >= 2");
  }
  if (seeds < 1) throw ConfigError("rate study needs seeds >= 1");
  if (!(weight_bound_cap > 0.0)) throw ConfigError("weight bound cap must be positive");
  if (!(output_bound > 0.0)) throw ConfigError("output bound must be positive");
  if (mc_draws < 1) throw ConfigError("mc_draws must be >= 1");
  if (eval_count < 100) throw ConfigError("eval_count must be >= 100");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(penalty_tau > 0.0)) throw ConfigError("penalty tau must be positive");
  if (penalty_lambda >= 0.0 && !std::isfinite(penalty_lambda)) {
    throw ConfigError("penalty lambda must be finite");
  }
}

nlohmann::json RateStudyConfig::to_json() const {
  return {{"generator", generator.to_json()},
          {"rate_spec", rate.to_json()},
          {"estimator", estimator},
          {"ns", ns},
          {"seeds", seeds},
          {"train", train.to_json()},
          {"penalty_lambda", penalty_lambda},
          {"penalty_tau", penalty_tau},
          {"lambda_exponent", lambda_exponent},
          {"weight_bound_cap", weight_bound_cap},
          {"output_bound", output_bound},
          {"mc_draws", mc_draws},
          {"eval_count", eval_count},
          {"bandwidth", bandwidth},
          {"seed", seed}};
}

RateStudyConfig RateStudyConfig::from_json(const nlohmann::json& j) {
  RateStudyConfig config;
  try {
    if (j.contains("generator")) config.generator = GeneratorSpec::from_json(j.at("generator"));
    if (j.contains("rate_spec")) config.rate = RateSpec::from_json(j.at("rate_spec"));
    if (j.contains("estimator")) config.estimator = j.at("estimator").get<std::string>();
    if (j.contains("ns")) config.ns = j.at("ns").get<std::vector<std::int64_t>>();
    if (j.contains("seeds")) config.seeds = j.at("seeds").get<int>();
    if (j.contains("train")) config.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("penalty_lambda")) config.penalty_lambda = j.at("penalty_lambda").get<double>();
    if (j.contains("penalty_tau")) config.penalty_tau = j.at("penalty_tau").get<double>();
    if (j.contains("lambda_exponent")) {
      config.lambda_exponent = j.at("lambda_exponent").get<double>();
    }
    if (j.contains("weight_bound_cap")) {
      config.weight_bound_cap = j.at("weight_bound_cap").get<double>();
    }
    if (j.contains("output_bound")) config.output_bound = j.at("output_bound").get<double>();
    if (j.contains("mc_draws")) config.mc_draws = j.at("mc_draws").get<std::int64_t>();
    if (j.contains("eval_count")) config.eval_count = j.at("eval_count").get<std::int64_t>();
    if (j.contains("bandwidth")) config.bandwidth = j.at("bandwidth").get<double>();
    if (j.contains("threads")) config.threads = j.at("threads").get<int>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad rate study config: ") + e.what());
  }
  config.validate();
  return config;
}

namespace {

struct FittedPredictor {
  Predictor predict;
  bool diverged = false;
};

FittedPredictor fit_estimator(const std::string& estimator, const SeriesDataset& data,
                              const Architecture& arch, const GeneratorSpec& generator,
                              const RateStudyConfig& config, const TrainConfig& train) {
  if (estimator == "mean") {
    const double c = data.outputs.mean();
    return {[c](const Eigen::VectorXd&) { return c; }, false};
  }
  if (estimator == "oracle") {
    return {truth_predictor(generator.make_truth()), false};
  }
  if (estimator == "ls") {
    TrainResult r = train_least_squares(data, arch, train);
    return {network_predictor(r.net), r.diverged};
  }
  if (estimator == "kmee") {
    TrainResult r = train_kernel_mee(data, arch, train, std::nullopt, config.bandwidth);
    return {network_predictor(r.net), r.diverged};
  }
  const std::unique_ptr<ErrorDensity> noise = generator.make_noise();
  if (estimator == "npdnn") {
    TrainResult r = train_npdnn(data, arch, *noise, train);
    return {network_predictor(r.net), r.diverged};
  }
  PenaltySpec penalty;
  penalty.lambda = config.penalty_lambda >= 0.0
                       ? config.penalty_lambda
                       : default_lambda(data.size(), config.lambda_exponent);
  penalty.tau = config.penalty_tau;
  TrainResult r = train_spdnn(data, arch, *noise, penalty, train);
  return {network_predictor(r.net), r.diverged};
}

}  // namespace

RateStudyResult rate_study(const RateStudyConfig& config) {
  config.validate();

  const std::int64_t cell_count =
      static_cast<std::int64_t>(config.ns.size()) * config.seeds;
  RateStudyResult result;
  result.cells.resize(static_cast<std::size_t>(cell_count));
  result.ns = config.ns;
  result.theory_exponent = config.rate.theory_exponent();

  run_indexed(cell_count, config.threads, [&](std::int64_t index) {
    const std::size_t n_index = static_cast<std::size_t>(index) / config.seeds;
    const int seed_index = static_cast<int>(index % config.seeds);
    const std::int64_t n = config.ns[n_index];
    const std::uint64_t cell =
        mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(n)),
                 static_cast<std::uint64_t>(seed_index));

    GeneratorSpec gen = config.generator;
    gen.seed = mix_seed(cell, 1);
    const SeriesDataset data = generate(gen, n);

    Architecture arch = holder_architecture(config.rate, n, config.output_bound);
    arch.weight_bound = std::min(arch.weight_bound, config.weight_bound_cap);

    TrainConfig train = config.train;
    train.seed = mix_seed(cell, 2);
    train.record_history = false;

    const FittedPredictor fitted =
        fit_estimator(config.estimator, data, arch, gen, config, train);

    const Eigen::MatrixXd eval_inputs =
        stationary_inputs(config.generator, config.eval_count, mix_seed(cell, 3));
    const Predictor truth = truth_predictor(gen.make_truth());
    const std::unique_ptr<ErrorDensity> noise = gen.make_noise();
    const ExcessEstimate excess = excess_risk_mc(fitted.predict, truth, *noise, eval_inputs,
                                                 config.mc_draws, mix_seed(cell, 4));
    const double mse = mean_squared_gap(fitted.predict, truth, eval_inputs);

    result.cells[static_cast<std::size_t>(index)] =
        RateCell{n, seed_index, excess.value, excess.std_error, mse, fitted.diverged};
  });

  result.degenerate = false;
  for (std::size_t ni = 0; ni < config.ns.size(); ++ni) {
    double mean = 0.0;
    for (int s = 0; s < config.seeds; ++s) {
      mean += result.cells[ni * static_cast<std::size_t>(config.seeds) +
                           static_cast<std::size_t>(s)]
                  .excess;
    }
    mean /= static_cast<double>(config.seeds);
    double ss = 0.0;
    for (int s = 0; s < config.seeds; ++s) {
      const double d = result.cells[ni * static_cast<std::size_t>(config.seeds) +
                                    static_cast<std::size_t>(s)]
                           .excess -
                       mean;
      ss += d * d;
    }
    result.mean_excess.push_back(mean);
    result.sd_excess.push_back(
        config.seeds > 1 ? std::sqrt(ss / static_cast<double>(config.seeds - 1)) : 0.0);
    if (!(mean > 1e-12)) result.degenerate = true;
  }

  result.slope = result.degenerate ? std::numeric_limits<double>::quiet_NaN()
                                   : fit_loglog_slope(result.ns, result.mean_excess);
  return result;
}

void write_rate_study_csv(const RateStudyResult& result, const RateStudyConfig& config,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open results for writing: " + path.string());
  char buf[64];
  out << "# tool=meedr\n";
  out << "# version=" << kLibraryVersion << "\n";
  out << "# command=rate-study\n";
  out << "# estimator=" << config.estimator << "\n";
  out << "# master_seed=" << config.seed << "\n";
  out << "# seeds=" << config.seeds << "\n";
  out << "# mc_draws=" << config.mc_draws << "\n";
  out << "# eval_count=" << config.eval_count << "\n";
  out << "# weight_bound_cap=" << format_g17(buf, sizeof(buf), config.weight_bound_cap) << "\n";
  out << "# output_bound=" << format_g17(buf, sizeof(buf), config.output_bound) << "\n";
  out << "# generator=" << config.generator.to_json().dump() << "\n";
  out << "# rate_spec=" << config.rate.to_json().dump() << "\n";
  out << "# train=" << config.train.to_json().dump() << "\n";
  if (config.estimator == "spdnn") {
    if (config.penalty_lambda >= 0.0) {
      out << "# penalty_lambda=" << format_g17(buf, sizeof(buf), config.penalty_lambda) << "\n";
    } else {
      out << "# penalty_lambda=rule:(log n)^" << format_g17(buf, sizeof(buf), config.lambda_exponent)
          << "/n\n";
    }
    out << "# penalty_tau=" << format_g17(buf, sizeof(buf), config.penalty_tau) << "\n";
  }
  if (config.estimator == "kmee") {
    out << "# bandwidth="
        << (config.bandwidth > 0.0 ? format_g17(buf, sizeof(buf), config.bandwidth) : "silverman")
        << "\n";
  }
  out << "# theory_exponent=" << format_g17(buf, sizeof(buf), result.theory_exponent) << "\n";
  out << "# slope=" << format_g17(buf, sizeof(buf), result.slope) << "\n";
  out << "# degenerate=" << (result.degenerate ? 1 : 0) << "\n";
  for (std::size_t ni = 0; ni < result.ns.size(); ++ni) {
    out << "# mean_excess_" << result.ns[ni] << "="
        << format_g17(buf, sizeof(buf), result.mean_excess[ni]) << "\n";
    out << "# sd_excess_" << result.ns[ni] << "="
        << format_g17(buf, sizeof(buf), result.sd_excess[ni]) << "\n";
  }
  out << "n,seed,excess,std_error,test_mse,diverged\n";
  for (const RateCell& cell : result.cells) {
    out << cell.n << "," << cell.seed_index << ",";
    out << format_g17(buf, sizeof(buf), cell.excess) << ",";
    out << format_g17(buf, sizeof(buf), cell.std_error) << ",";
    out << format_g17(buf, sizeof(buf), cell.test_mse) << ",";
    out << (cell.diverged ? 1 : 0) << "\n";
  }
  if (!out) throw NumericError("results write failed: " + path.string());
}

void CompareConfig::validate() const {
  generator.validate();
  arch.validate();
  train.validate();
  density_from_json(model_noise);
  if (arch.input_dim() != generator.input_dim) {
    throw ConfigError("architecture input_dim must match the generator");
  }
  if (n < 2) throw ConfigError("comparison needs n >= 2");
  if (seeds < 1) throw ConfigError("comparison needs seeds >= 1");
  if (eval_count < 100) throw ConfigError("eval_count must be >= 100");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

nlohmann::json CompareConfig::to_json() const {
  return {{"generator", generator.to_json()},
          {"model_noise", model_noise},
          {"n", n},
          {"seeds", seeds},
          {"arch", arch.to_json()},
          {"train", train.to_json()},
          {"eval_count", eval_count},
          {"seed", seed}};
}

CompareConfig CompareConfig::from_json(const nlohmann::json& j) {
  CompareConfig config;
  try {
    if (j.contains("generator")) config.generator = GeneratorSpec::from_json(j.at("generator"));
    if (j.contains("model_noise")) config.model_noise = j.at("model_noise");
    if (j.contains("n")) config.n = j.at("n").get<std::int64_t>();
    if (j.contains("seeds")) config.seeds = j.at("seeds").get<int>();
    if (!j.contains("arch")) throw ConfigError("compare config needs an 'arch' block");
    config.arch = Architecture::from_json(j.at("arch"));
    if (j.contains("train")) config.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("eval_count")) config.eval_count = j.at("eval_count").get<std::int64_t>();
    if (j.contains("threads")) config.threads = j.at("threads").get<int>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad compare config: ") + e.what());
  }
  config.validate();
  return config;
}

CompareResult robustness_compare(const CompareConfig& config) {
  config.validate();

  CompareResult result;
  result.rows.resize(static_cast<std::size_t>(config.seeds));

  run_indexed(config.seeds, config.threads, [&](std::int64_t index) {
    const std::uint64_t cell = mix_seed(config.seed, static_cast<std::uint64_t>(index));

    GeneratorSpec gen = config.generator;
    gen.seed = mix_seed(cell, 1);
    const SeriesDataset data = generate(gen, config.n);

    TrainConfig train = config.train;
    train.seed = mix_seed(cell, 2);  // same seed for both fits: paired comparison
    train.record_history = false;

    const std::unique_ptr<ErrorDensity> model_noise = density_from_json(config.model_noise);
    const TrainResult entropy_fit = train_npdnn(data, config.arch, *model_noise, train);
    const TrainResult ls_fit = train_least_squares(data, config.arch, train);

    const Eigen::MatrixXd eval_inputs =
        stationary_inputs(config.generator, config.eval_count, mix_seed(cell, 3));
    const Predictor truth = truth_predictor(gen.make_truth());

    result.rows[static_cast<std::size_t>(index)] = CompareRow{
        static_cast<int>(index),
        mean_squared_gap(network_predictor(entropy_fit.net), truth, eval_inputs),
        mean_squared_gap(network_predictor(ls_fit.net), truth, eval_inputs)};
  });

  result.entropy_wins = 0.0;
  std::vector<double> entropy_scores;
  std::vector<double> ls_scores;
  for (const CompareRow& row : result.rows) {
    if (row.entropy_mse < row.ls_mse) {
      result.entropy_wins += 1.0;
    } else if (row.entropy_mse == row.ls_mse) {
      result.entropy_wins += 0.5;
    }
    entropy_scores.push_back(row.entropy_mse);
    ls_scores.push_back(row.ls_mse);
  }
  result.median_entropy_mse = median_of(entropy_scores);
  result.median_ls_mse = median_of(ls_scores);
  return result;
}

void write_compare_csv(const CompareResult& result, const CompareConfig& config,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open results for writing: " + path.string());
  char buf[64];
  out << "# tool=meedr\n";
  out << "# version=" << kLibraryVersion << "\n";
  out << "# command=compare\n";
  out << "# master_seed=" << config.seed << "\n";
  out << "# n=" << config.n << "\n";
  out << "# seeds=" << config.seeds << "\n";
  out << "# eval_count=" << config.eval_count << "\n";
  out << "# generator=" << config.generator.to_json().dump() << "\n";
  out << "# model_noise=" << config.model_noise.dump() << "\n";
  out << "# arch=" << config.arch.to_json().dump() << "\n";
  out << "# train=" << config.train.to_json().dump() << "\n";
  out << "# entropy_wins=" << format_g17(buf, sizeof(buf), result.entropy_wins) << "\n";
  out << "# median_entropy_mse=" << format_g17(buf, sizeof(buf), result.median_entropy_mse)
      << "\n";
  out << "# median_ls_mse=" << format_g17(buf, sizeof(buf), result.median_ls_mse) << "\n";
  out << "seed,entropy_mse,ls_mse,winner\n";
  for (const CompareRow& row : result.rows) {
    const char* winner = row.entropy_mse < row.ls_mse
                             ? "entropy"
                             : (row.entropy_mse == row.ls_mse ? "tie" : "ls");
    out << row.seed_index << ",";
    out << format_g17(buf, sizeof(buf), row.entropy_mse) << ",";
    out << format_g17(buf, sizeof(buf), row.ls_mse) << "," << winner << "\n";
  }
  if (!out) throw NumericError("results write failed: " + path.string());
}

}  // namespace meedr
