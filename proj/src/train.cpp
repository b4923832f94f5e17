#include "meedr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "meedr/errors.hpp"
#include "meedr/rng.hpp"

namespace meedr {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("step_size must be positive and finite");
  }
  if (prune_every < 1) throw ConfigError("prune_every must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"step_size", step_size},
          {"optimizer", optimizer == Optimizer::adam ? "adam" : "momentum"},
          {"seed", seed},
          {"prune_every", prune_every},
          {"record_history", record_history}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig config;
  try {
    if (j.contains("epochs")) config.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) config.batch_size = j.at("batch_size").get<int>();
    if (j.contains("step_size")) config.step_size = j.at("step_size").get<double>();
    if (j.contains("optimizer")) {
      const std::string name = j.at("optimizer").get<std::string>();
      if (name == "adam") {
        config.optimizer = Optimizer::adam;
      } else if (name == "momentum") {
        config.optimizer = Optimizer::momentum;
      } else {
        throw ConfigError("unknown optimizer: " + name);
      }
    }
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("prune_every")) config.prune_every = j.at("prune_every").get<int>();
    if (j.contains("record_history")) config.record_history = j.at("record_history").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  config.validate();
  return config;
}

namespace {

constexpr double kThetaGuard = 1e12;

struct OptimizerState {
  Optimizer kind;
  double lr;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step_count = 0;

  OptimizerState(Optimizer kind_, double lr_, Eigen::Index size)
      : kind(kind_), lr(lr_), m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    if (kind == Optimizer::adam) {
      constexpr double b1 = 0.9;
      constexpr double b2 = 0.999;
      constexpr double eps = 1e-8;
      ++step_count;
      m = b1 * m + (1.0 - b1) * grad;
      v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count));
      theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    } else {
      m = 0.9 * m + grad;
      theta -= lr * m;
    }
  }
};

struct LoopPolicy {
  const PenaltySpec* penalty = nullptr;
  std::optional<std::int64_t> sparsity;
};

void hard_prune(Network& net, std::int64_t budget) {
  net.set_theta(prune_to_budget(net.theta(), budget));
}

double mean_entropy(const Network& net, const Eigen::MatrixXd& x_cols, const Eigen::VectorXd& y,
                    const ErrorDensity& f) {
  Eigen::VectorXd h = net.forward_batch(x_cols);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) total += -f.log_density(y(i) - h(i));
  return total / static_cast<double>(y.size());
}

double mean_half_square(const Network& net, const Eigen::MatrixXd& x_cols,
                        const Eigen::VectorXd& y) {
  Eigen::VectorXd h = net.forward_batch(x_cols);
  return 0.5 * (y - h).squaredNorm() / static_cast<double>(y.size());
}

void check_dims(const SeriesDataset& data, const Architecture& arch) {
  if (data.size() < 1) throw ConfigError("training needs at least one observation");
  if (data.input_dim() != arch.input_dim()) {
    std::ostringstream msg;
    msg << "architecture input_dim " << arch.input_dim() << " does not match data input_dim "
        << data.input_dim();
    throw ConfigError(msg.str());
  }
}

// Shared minibatch loop. batch_loss(net, x, y) evaluates the fit criterion on
// one batch; full_risk(net) evaluates it on the whole sample for the history.
template <typename BatchLoss, typename FullRisk>
TrainResult run_pointwise(const SeriesDataset& data, const Architecture& arch,
                          const TrainConfig& config, const LoopPolicy& policy,
                          BatchLoss&& batch_loss, FullRisk&& full_risk) {
  config.validate();
  arch.validate();
  if (policy.penalty) policy.penalty->validate();
  check_dims(data, arch);

  Rng rng(config.seed);
  Network net = Network::initialized(arch, rng);
  const Eigen::MatrixXd x_cols = data.inputs.transpose();
  const Eigen::VectorXd& y = data.outputs;
  const std::int64_t n = data.size();
  const int d = data.input_dim();

  OptimizerState opt(config.optimizer, config.step_size, net.parameter_count());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});

  TrainResult result{Network(arch), {}, false, 0.0, 0.0};
  Eigen::VectorXd last_good = net.theta();
  bool bad = false;

  for (int epoch = 1; epoch <= config.epochs && !bad; ++epoch) {
    rng.shuffle(order);
    for (std::int64_t b0 = 0; b0 < n; b0 += config.batch_size) {
      const std::int64_t b1 = std::min<std::int64_t>(b0 + config.batch_size, n);
      const Eigen::Index m = static_cast<Eigen::Index>(b1 - b0);
      Eigen::MatrixXd xb(d, m);
      Eigen::VectorXd yb(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        const std::int64_t idx = order[static_cast<std::size_t>(b0 + j)];
        xb.col(j) = x_cols.col(idx);
        yb(j) = y(idx);
      }
      LossEval eval = batch_loss(net, xb, yb);
      if (!std::isfinite(eval.mean_loss) || !eval.gradient.allFinite()) {
        bad = true;
        break;
      }
      Eigen::VectorXd grad = eval.gradient;
      Eigen::VectorXd theta = net.theta();
      if (policy.penalty) grad += penalty_subgradient(*policy.penalty, theta);
      opt.step(theta, grad);
      net.set_theta(theta);
      net.clamp_weights();
    }
    if (bad) break;
    if (policy.sparsity &&
        (epoch % config.prune_every == 0 || epoch == config.epochs)) {
      hard_prune(net, *policy.sparsity);
    }
    const double risk = full_risk(net);
    const Eigen::VectorXd theta = net.theta();
    if (!std::isfinite(risk) || !theta.allFinite() ||
        theta.cwiseAbs().maxCoeff() > kThetaGuard) {
      bad = true;
      break;
    }
    if (config.record_history) {
      const double pen = policy.penalty ? penalty_total(*policy.penalty, theta) : 0.0;
      result.history.push_back({risk, pen});
    }
    last_good = theta;
  }

  if (bad) {
    net.set_theta(last_good);
    result.diverged = true;
  }
  if (policy.sparsity && (bad || config.epochs == 0)) hard_prune(net, *policy.sparsity);

  result.final_risk = full_risk(net);
  result.final_penalty =
      policy.penalty ? penalty_total(*policy.penalty, net.theta()) : 0.0;
  result.net = std::move(net);
  return result;
}

}  // namespace

double empirical_risk(const Network& net, const SeriesDataset& data, const ErrorDensity& f) {
  if (data.size() < 1) throw ConfigError("empirical risk needs observations");
  return mean_entropy(net, data.inputs.transpose(), data.outputs, f);
}

double empirical_mse(const Network& net, const SeriesDataset& data) {
  if (data.size() < 1) throw ConfigError("empirical mse needs observations");
  Eigen::VectorXd h = net.forward_batch(data.inputs.transpose());
  return (data.outputs - h).squaredNorm() / static_cast<double>(data.size());
}

TrainResult train_npdnn(const SeriesDataset& data, const Architecture& arch,
                        const ErrorDensity& f, const TrainConfig& config) {
  LoopPolicy policy;
  policy.sparsity = arch.sparsity_budget;
  return run_pointwise(
      data, arch, config, policy,
      [&f](const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
        return entropy_loss(net, x, y, f);
      },
      [&](const Network& net) {
        return mean_entropy(net, data.inputs.transpose(), data.outputs, f);
      });
}

TrainResult train_spdnn(const SeriesDataset& data, const Architecture& arch,
                        const ErrorDensity& f, const PenaltySpec& penalty,
                        const TrainConfig& config) {
  LoopPolicy policy;
  policy.penalty = &penalty;
  return run_pointwise(
      data, arch, config, policy,
      [&f](const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
        return entropy_loss(net, x, y, f);
      },
      [&](const Network& net) {
        return mean_entropy(net, data.inputs.transpose(), data.outputs, f);
      });
}

TrainResult train_least_squares(const SeriesDataset& data, const Architecture& arch,
                                const TrainConfig& config) {
  LoopPolicy policy;
  policy.sparsity = arch.sparsity_budget;
  return run_pointwise(
      data, arch, config, policy,
      [](const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
        return squared_loss(net, x, y);
      },
      [&](const Network& net) {
        return mean_half_square(net, data.inputs.transpose(), data.outputs);
      });
}

namespace {

double kernel_derivative(double t, double bandwidth, KernelKind kind) {
  const double s = t / bandwidth;
  const double b2 = bandwidth * bandwidth;
  if (kind == KernelKind::gaussian) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599343819;
    return -s * inv_sqrt_2pi * std::exp(-0.5 * s * s) / b2;
  }
  if (std::abs(s) < 1.0) return -1.5 * s / b2;
  return 0.0;
}

double kernel_objective(const Eigen::VectorXd& residuals, double bandwidth, KernelKind kind) {
  std::vector<double> res(residuals.data(), residuals.data() + residuals.size());
  KernelDensityEstimate kde(res, bandwidth, kind);
  double total = 0.0;
  for (double r : res) total += -kde.log_density(r);
  return total / static_cast<double>(res.size());
}

}  // namespace

TrainResult train_kernel_mee(const SeriesDataset& data, const Architecture& arch,
                             const TrainConfig& config,
                             const std::optional<PenaltySpec>& penalty, double bandwidth,
                             KernelKind kernel) {
  config.validate();
  arch.validate();
  if (penalty) penalty->validate();
  check_dims(data, arch);
  if (data.size() < 2) throw ConfigError("kernel entropy fit needs at least two observations");

  Rng rng(config.seed);
  Network net = Network::initialized(arch, rng);
  const Eigen::MatrixXd x_cols = data.inputs.transpose();
  const Eigen::VectorXd& y = data.outputs;
  const std::int64_t n = data.size();
  const double dn = static_cast<double>(n);

  auto residuals_of = [&](const Network& model) {
    return (y - model.forward_batch(x_cols)).eval();
  };

  double b = bandwidth;
  if (!(b > 0.0)) {
    const Eigen::VectorXd r0 = residuals_of(net);
    b = KernelDensityEstimate::silverman_bandwidth(
        std::vector<double>(r0.data(), r0.data() + r0.size()));
  }

  const bool prune = !penalty && arch.sparsity_budget.has_value();
  OptimizerState opt(config.optimizer, config.step_size, net.parameter_count());

  TrainResult result{Network(arch), {}, false, 0.0, 0.0};
  Eigen::VectorXd last_good = net.theta();
  bool bad = false;

  for (int epoch = 1; epoch <= config.epochs && !bad; ++epoch) {
    ForwardTrace trace = forward_trace(net, x_cols);
    const double bound = arch.output_bound;
    Eigen::VectorXd eps(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      eps(i) = y(i) - std::clamp(trace.raw(i), -bound, bound);
    }

    // Parzen estimate at each residual; w carries the floor indicator / rho.
    std::vector<double> res(eps.data(), eps.data() + eps.size());
    KernelDensityEstimate kde(res, b, kernel);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double rho = kde.density(eps(i));
      w(i) = rho > kParzenFloor ? 1.0 / rho : 0.0;
    }

    // d objective / d prediction_k = (sum_i w_i K_b'(e_k - e_i)
    //                                 + w_k sum_j K_b'(e_k - e_j)) / n^2
    Eigen::RowVectorXd output_grad(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      double weighted = 0.0;
      double plain = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double kp = kernel_derivative(eps(k) - eps(i), b, kernel);
        weighted += w(i) * kp;
        plain += kp;
      }
      const bool inside = std::abs(trace.raw(k)) <= bound;
      output_grad(k) = inside ? (weighted + w(k) * plain) / (dn * dn) : 0.0;
    }

    Eigen::VectorXd grad = backpropagate(net, trace, output_grad);
    if (!grad.allFinite()) {
      bad = true;
      break;
    }
    Eigen::VectorXd theta = net.theta();
    if (penalty) grad += penalty_subgradient(*penalty, theta);
    opt.step(theta, grad);
    net.set_theta(theta);
    net.clamp_weights();
    if (prune && (epoch % config.prune_every == 0 || epoch == config.epochs)) {
      hard_prune(net, *arch.sparsity_budget);
    }

    const double risk = kernel_objective(residuals_of(net), b, kernel);
    const Eigen::VectorXd current = net.theta();
    if (!std::isfinite(risk) || !current.allFinite() ||
        current.cwiseAbs().maxCoeff() > kThetaGuard) {
      bad = true;
      break;
    }
    if (config.record_history) {
      const double pen = penalty ? penalty_total(*penalty, current) : 0.0;
      result.history.push_back({risk, pen});
    }
    last_good = current;
  }

  if (bad) {
    net.set_theta(last_good);
    result.diverged = true;
  }
  if (prune && (bad || config.epochs == 0)) hard_prune(net, *arch.sparsity_budget);

  result.final_risk = kernel_objective(residuals_of(net), b, kernel);
  result.final_penalty = penalty ? penalty_total(*penalty, net.theta()) : 0.0;
  result.net = std::move(net);
  return result;
}

void write_history_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open history for writing: " + path.string());
  out << "epoch,risk,penalty,objective\n";
  char buf[140];
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    const EpochRecord& rec = result.history[e];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e + 1, rec.risk, rec.penalty,
                  rec.risk + rec.penalty);
    out << buf;
  }
  if (!out) throw NumericError("history write failed: " + path.string());
}

}  // namespace meedr
