// Command-line front end: dataset generation, training, checkpoint
// evaluation, rate studies, and robustness comparisons. All output files are
// deterministic functions of the config and seed; thread count never changes
// a byte.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "meedr/data.hpp"
#include "meedr/density.hpp"
#include "meedr/errors.hpp"
#include "meedr/network.hpp"
#include "meedr/penalty.hpp"
#include "meedr/risk.hpp"
#include "meedr/train.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw meedr::ConfigError("cannot open config: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw meedr::ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct GenOptions {
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
};

int run_gen(const GenOptions& opt) {
  const json config = read_json_file(opt.config_path);
  if (!config.contains("generator") || !config.contains("n")) {
    throw meedr::ConfigError("gen config needs 'generator' and 'n'");
  }
  meedr::GeneratorSpec spec = meedr::GeneratorSpec::from_json(config.at("generator"));
  if (opt.seed) spec.seed = *opt.seed;
  const auto n = config.at("n").get<std::int64_t>();
  const meedr::SeriesDataset data = meedr::generate(spec, n);
  meedr::save_dataset(data, opt.out_path);
  std::cout << "wrote " << opt.out_path << " (n=" << data.size() << ", d=" << data.input_dim()
            << ")\n";
  return kExitOk;
}

struct TrainOptions {
  std::string config_path;
  std::string data_path;
  std::string out_path;
  std::string history_path;
  std::optional<std::uint64_t> seed;
};

// Penalty block with the lambda rule: a missing or negative lambda resolves
// to (log n)^exponent / n.
meedr::PenaltySpec resolve_penalty(const json& config, std::int64_t n) {
  meedr::PenaltySpec penalty;
  bool lambda_given = false;
  if (config.contains("penalty")) {
    const json& p = config.at("penalty");
    if (p.contains("tau")) penalty.tau = p.at("tau").get<double>();
    if (p.contains("lambda")) {
      const double lambda = p.at("lambda").get<double>();
      if (lambda >= 0.0) {
        penalty.lambda = lambda;
        lambda_given = true;
      }
    }
  }
  if (!lambda_given) {
    const double exponent =
        config.contains("lambda_exponent") ? config.at("lambda_exponent").get<double>() : 6.0;
    penalty.lambda = meedr::default_lambda(n, exponent);
  }
  penalty.validate();
  return penalty;
}

int run_train(const TrainOptions& opt) {
  const json config = read_json_file(opt.config_path);
  if (!config.contains("arch")) throw meedr::ConfigError("train config needs an 'arch' block");
  const meedr::Architecture arch = meedr::Architecture::from_json(config.at("arch"));
  meedr::TrainConfig train = config.contains("train")
                                 ? meedr::TrainConfig::from_json(config.at("train"))
                                 : meedr::TrainConfig{};
  if (opt.seed) train.seed = *opt.seed;
  const std::string estimator =
      config.contains("estimator") ? config.at("estimator").get<std::string>() : "npdnn";

  const meedr::SeriesDataset data = meedr::load_dataset(opt.data_path);

  // Noise model: explicit in the config, else from dataset provenance.
  json noise_spec;
  if (config.contains("noise")) {
    noise_spec = config.at("noise");
  } else if (data.provenance.is_object() && data.provenance.contains("generator") &&
             data.provenance.at("generator").contains("noise")) {
    noise_spec = data.provenance.at("generator").at("noise");
  }

  const meedr::TrainResult result = [&]() -> meedr::TrainResult {
    if (estimator == "npdnn" || estimator == "spdnn") {
      if (noise_spec.is_null()) {
        throw meedr::ConfigError(
            "no noise model: give 'noise' in the config or use a dataset with provenance");
      }
      const auto noise = meedr::density_from_json(noise_spec);
      if (estimator == "npdnn") return meedr::train_npdnn(data, arch, *noise, train);
      return meedr::train_spdnn(data, arch, *noise, resolve_penalty(config, data.size()), train);
    }
    if (estimator == "kmee") {
      std::optional<meedr::PenaltySpec> penalty;
      if (config.contains("penalty")) penalty = resolve_penalty(config, data.size());
      const double bandwidth =
          config.contains("bandwidth") ? config.at("bandwidth").get<double>() : 0.0;
      return meedr::train_kernel_mee(data, arch, train, penalty, bandwidth);
    }
    if (estimator == "ls") return meedr::train_least_squares(data, arch, train);
    throw meedr::ConfigError("unknown estimator: " + estimator);
  }();

  meedr::save_checkpoint(result.net, opt.out_path);
  std::string history_path = opt.history_path;
  if (history_path.empty()) {
    std::filesystem::path p(opt.out_path);
    p.replace_extension(".history.csv");
    history_path = p.string();
  }
  meedr::write_history_csv(result, history_path);

  std::cout << "wrote " << opt.out_path << " (final_risk=" << format_g17(result.final_risk)
            << ", nonzero=" << result.net.nonzero_count() << ")\n";
  std::cout << "wrote " << history_path << "\n";
  if (result.diverged) {
    std::cerr << "training diverged; checkpoint holds the last finite state\n";
    return kExitNumeric;
  }
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint_path;
  std::string generator_path;
  std::string data_path;
  std::string out_path;
  std::int64_t mc_draws = 200000;
  std::int64_t eval_count = 4096;
  std::optional<std::uint64_t> seed;
};

int run_eval(const EvalOptions& opt) {
  meedr::GeneratorSpec spec;
  if (!opt.generator_path.empty()) {
    json j = read_json_file(opt.generator_path);
    if (j.contains("generator")) j = j.at("generator");
    spec = meedr::GeneratorSpec::from_json(j);
  } else if (!opt.data_path.empty()) {
    const meedr::SeriesDataset data = meedr::load_dataset(opt.data_path);
    if (!data.provenance.is_object() || !data.provenance.contains("generator")) {
      throw meedr::ConfigError("dataset has no provenance; pass --generator instead");
    }
    spec = meedr::GeneratorSpec::from_json(data.provenance.at("generator"));
  } else {
    throw meedr::ConfigError("eval needs --generator or --data");
  }

  const meedr::Network net = meedr::load_checkpoint(opt.checkpoint_path);
  if (net.architecture().input_dim() != spec.input_dim) {
    throw meedr::ConfigError("checkpoint input_dim does not match the generator");
  }
  const std::uint64_t seed = opt.seed.value_or(spec.seed);

  const Eigen::MatrixXd eval_inputs =
      meedr::stationary_inputs(spec, opt.eval_count, meedr::mix_seed(seed, 1));
  const meedr::Predictor predictor = meedr::network_predictor(net);
  const meedr::Predictor truth = meedr::truth_predictor(spec.make_truth());
  const auto noise = spec.make_noise();
  const meedr::ExcessEstimate excess = meedr::excess_risk_mc(
      predictor, truth, *noise, eval_inputs, opt.mc_draws, meedr::mix_seed(seed, 2));
  const double mse = meedr::mean_squared_gap(predictor, truth, eval_inputs);

  std::ofstream out(opt.out_path);
  if (!out) throw meedr::ConfigError("cannot open report for writing: " + opt.out_path);
  out << "# tool=meedr\n";
  out << "# version=" << meedr::kLibraryVersion << "\n";
  out << "# command=eval\n";
  out << "# checkpoint=" << opt.checkpoint_path << "\n";
  out << "# generator=" << spec.to_json().dump() << "\n";
  out << "# mc_draws=" << opt.mc_draws << "\n";
  out << "# eval_count=" << opt.eval_count << "\n";
  out << "# seed=" << seed << "\n";
  out << "excess,std_error,test_mse\n";
  out << format_g17(excess.value) << "," << format_g17(excess.std_error) << ","
      << format_g17(mse) << "\n";
  if (!out) throw meedr::NumericError("report write failed: " + opt.out_path);
  std::cout << "wrote " << opt.out_path << " (excess=" << format_g17(excess.value) << ")\n";
  return kExitOk;
}

struct StudyOptions {
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

int run_rate_study(const StudyOptions& opt) {
  meedr::RateStudyConfig config = meedr::RateStudyConfig::from_json(read_json_file(opt.config_path));
  if (opt.seed) config.seed = *opt.seed;
  if (opt.threads) config.threads = *opt.threads;
  const meedr::RateStudyResult result = meedr::rate_study(config);
  meedr::write_rate_study_csv(result, config, opt.out_path);
  std::cout << "wrote " << opt.out_path << " (slope=" << format_g17(result.slope)
            << ", theory=" << format_g17(-result.theory_exponent) << ")\n";
  return kExitOk;
}

int run_compare(const StudyOptions& opt) {
  meedr::CompareConfig config = meedr::CompareConfig::from_json(read_json_file(opt.config_path));
  if (opt.seed) config.seed = *opt.seed;
  if (opt.threads) config.threads = *opt.threads;
  const meedr::CompareResult result = meedr::robustness_compare(config);
  meedr::write_compare_csv(result, config, opt.out_path);
  std::cout << "wrote " << opt.out_path
            << " (entropy_wins=" << format_g17(result.entropy_wins) << "/" << config.seeds
            << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-fit deep regression toolkit"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads, "worker threads for study commands");

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a dependent dataset");
  gen_cmd->add_option("--config", gen.config_path, "JSON with 'generator' and 'n'")->required();
  gen_cmd->add_option("--out", gen.out_path, "output CSV path")->required();

  TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "fit an estimator to a dataset");
  train_cmd->add_option("--config", train.config_path, "JSON train config")->required();
  train_cmd->add_option("--data", train.data_path, "input dataset CSV")->required();
  train_cmd->add_option("--out", train.out_path, "output checkpoint path")->required();
  train_cmd->add_option("--history", train.history_path,
                        "history CSV path (default: checkpoint stem + .history.csv)");

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a generator");
  eval_cmd->add_option("--checkpoint", eval.checkpoint_path, "checkpoint path")->required();
  eval_cmd->add_option("--generator", eval.generator_path, "generator spec JSON");
  eval_cmd->add_option("--data", eval.data_path, "dataset CSV with provenance sidecar");
  eval_cmd->add_option("--out", eval.out_path, "report CSV path")->required();
  eval_cmd->add_option("--mc", eval.mc_draws, "Monte Carlo noise draws");
  eval_cmd->add_option("--inputs", eval.eval_count, "eval input count");

  StudyOptions rate;
  CLI::App* rate_cmd = app.add_subcommand("rate-study", "excess risk versus sample size");
  rate_cmd->add_option("--config", rate.config_path, "JSON study config")->required();
  rate_cmd->add_option("--out", rate.out_path, "results CSV path")->required();

  StudyOptions compare;
  CLI::App* compare_cmd = app.add_subcommand("compare", "entropy fit versus squared loss");
  compare_cmd->add_option("--config", compare.config_path, "JSON comparison config")->required();
  compare_cmd->add_option("--out", compare.out_path, "results CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    gen.seed = seed;
    train.seed = seed;
    eval.seed = seed;
    rate.seed = seed;
    rate.threads = threads;
    compare.seed = seed;
    compare.threads = threads;
    if (gen_cmd->parsed()) return run_gen(gen);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (rate_cmd->parsed()) return run_rate_study(rate);
    if (compare_cmd->parsed()) return run_compare(compare);
    throw meedr::ConfigError("no command given");
  } catch (const meedr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const meedr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
