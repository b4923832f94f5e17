#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "meedr/density.hpp"
#include "meedr/rng.hpp"

namespace meedr {

// Shape and constraint set of a fully connected ReLU regression network:
// widths = (input_dim, N_1, ..., N_L, 1), every weight and bias clamped to
// [-weight_bound, weight_bound], output hard-clamped to
// [-output_bound, output_bound], and optionally at most sparsity_budget
// nonzero parameters.
struct Architecture {
  std::vector<int> widths;
  double weight_bound = 1e6;
  double output_bound = 10.0;
  std::optional<std::int64_t> sparsity_budget;

  int input_dim() const { return widths.front(); }
  int hidden_layers() const { return static_cast<int>(widths.size()) - 2; }
  std::int64_t parameter_count() const;
  void validate() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  static Architecture uniform(int input_dim, int hidden_layers, int width,
                              double weight_bound, double output_bound,
                              std::optional<std::int64_t> sparsity_budget = std::nullopt);
};

// Feedforward ReLU network with scalar output. Parameters are exposed as one
// flat vector theta: for each layer, the weight matrix in column-major order
// followed by the bias vector, layers in input-to-output order.
class Network {
 public:
  explicit Network(Architecture arch);  // all parameters zero

  // He-style uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)),
  // entries then clamped into the weight box. Biases start at zero.
  static Network initialized(const Architecture& arch, Rng& rng);

  const Architecture& architecture() const { return arch_; }
  std::int64_t parameter_count() const { return arch_.parameter_count(); }

  double forward(const Eigen::VectorXd& x) const;
  // x is input_dim x m (one column per sample); returns the m clamped outputs.
  Eigen::VectorXd forward_batch(const Eigen::MatrixXd& x) const;

  Eigen::VectorXd theta() const;
  void set_theta(const Eigen::VectorXd& theta);  // size must match exactly

  void clamp_weights();  // project every parameter to the weight box
  std::int64_t nonzero_count() const;

  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  Eigen::MatrixXd& weight(int layer) { return weights_[static_cast<std::size_t>(layer)]; }
  Eigen::VectorXd& bias(int layer) { return biases_[static_cast<std::size_t>(layer)]; }

 private:
  Architecture arch_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

// Activations recorded during a batch forward pass; activations[0] is the
// input block, activations[l] the l-th hidden layer output, raw the unclamped
// network outputs.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;
  Eigen::RowVectorXd raw;
};

ForwardTrace forward_trace(const Network& net, const Eigen::MatrixXd& x);

// Chain rule from d(loss)/d(raw output), one entry per sample, back to a
// gradient in theta order. The caller folds in batch averaging and any
// output-clamp mask.
Eigen::VectorXd backpropagate(const Network& net, const ForwardTrace& trace,
                              const Eigen::RowVectorXd& output_grad);

struct LossEval {
  double mean_loss;
  Eigen::VectorXd gradient;
};

// Mean negative log density of the residuals y - clamp(raw) and its gradient
// with respect to theta. Samples pushed outside the output clamp contribute
// zero gradient.
LossEval entropy_loss(const Network& net, const Eigen::MatrixXd& x,
                      const Eigen::VectorXd& y, const ErrorDensity& f);

// Mean squared-error loss 0.5 * (y - clamp(raw))^2 with the same clamp
// handling. Its gradient coincides bitwise with entropy_loss under the
// shape-2 density, whose derivative is computed as exactly -u.
LossEval squared_loss(const Network& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Self-describing binary checkpoint (magic, format version, architecture,
// then theta as little-endian float64).
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

// Sample-size-driven architecture rule for regression of a smoothness-s
// target on d-dimensional inputs under dependence strength kappa. With
// e = kappa * s + d:
//   hidden layers  ceil(s * depth_const / e * log n)
//   width          ceil(width_const * n^{d/e})
//   sparsity       ceil(s * sparsity_const / e * n^{d/e} * log n)
//   weight bound   bound_const * n^{4(d+s)/e}
struct RateSpec {
  double smoothness = 1.0;
  double kappa = 2.0;
  int input_dim = 1;
  double depth_const = 1.0;
  double width_const = 1.0;
  double sparsity_const = 1.0;
  double bound_const = 1.0;

  void validate() const;
  // kappa*s / (kappa*s + d), the excess-risk decay exponent the rule targets.
  double theory_exponent() const;

  nlohmann::json to_json() const;
  static RateSpec from_json(const nlohmann::json& j);
};

Architecture holder_architecture(const RateSpec& spec, std::int64_t n,
                                 double output_bound = 10.0);

// Composition structure g_q o ... o g_0 where g_i maps dims[i] coordinates to
// dims[i+1], each component depending on actives[i] of them with Holder
// smoothness[i].
struct CompositionSpec {
  std::vector<int> dims;
  std::vector<int> actives;
  std::vector<double> smoothness;

  void validate() const;
  // beta_i* = beta_i * prod_{j>i} min(beta_j, 1)
  std::vector<double> effective_smoothness() const;
};

// phi_n = max_i n^{-2 beta_i* / (2 beta_i* + t_i)}
double composition_rate(const CompositionSpec& spec, std::int64_t n);

// Upper bound on the log covering number of the clamped sparse network class
// at sup-norm radius delta:
//   2 L (S+1) log( L (N+1) max(B,1) / delta ), floored at zero.
double covering_log_bound(double hidden_layers, double width, double weight_bound,
                          double sparsity, double delta);

}  // namespace meedr
