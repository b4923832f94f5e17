#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "meedr/density.hpp"

namespace meedr {

// Resolved regression target g from the built-in catalog:
//   linear       slope * mean(x)
//   tanh         scale * tanh(slope * mean(x))
//   sinmix       scale * mean_i sin(frequency * x_i)
//   composition  scale * tanh(x_1) * cos(x_d), needs d >= 2
class TruthFunction {
 public:
  TruthFunction(const std::string& id, const nlohmann::json& params, int input_dim);

  double operator()(const Eigen::VectorXd& x) const;
  Eigen::VectorXd evaluate_rows(const Eigen::MatrixXd& inputs) const;  // inputs n x d

  // Bound on sum_i sup |dg/dx_i|; a max-norm Lipschitz constant. The
  // autoregressive generator requires this to be < 1 so the chain forgets
  // its initial state geometrically.
  double lipschitz_bound() const;

  const std::string& id() const { return id_; }
  const nlohmann::json& params() const { return params_; }

 private:
  std::string id_;
  nlohmann::json params_;
  int input_dim_;
  double scale_ = 1.0;
  double slope_ = 1.0;
  double frequency_ = 1.0;
};

enum class GeneratorMode { autoregressive, exogenous };

// Recipe for a strictly stationary dependent regression sample.
//
// autoregressive: Y_t = g(Y_{t-1}, ..., Y_{t-d}) + xi_t, X_t = the lag window.
// exogenous:      d independent AR(1) chains X_t (coefficient 0.5, standard
//                 normal innovations), Y_t = g(X_t) + xi_t.
//
// Per step the input innovations are drawn first (exogenous mode only, in
// coordinate order), then the output noise, so streams are reproducible.
struct GeneratorSpec {
  std::string truth_id = "tanh";
  nlohmann::json truth_params = nlohmann::json::object();
  int input_dim = 1;
  GeneratorMode mode = GeneratorMode::exogenous;
  nlohmann::json noise = {{"family", "subbotin"}, {"r", 2.0}};
  int burn_in = -1;  // negative: resolves to 100 * input_dim
  std::uint64_t seed = 1;

  int resolved_burn_in() const { return burn_in < 0 ? 100 * input_dim : burn_in; }
  void validate() const;
  TruthFunction make_truth() const;
  std::unique_ptr<ErrorDensity> make_noise() const;

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

struct SeriesDataset {
  Eigen::MatrixXd inputs;    // n x d, row t holds X_t
  Eigen::VectorXd outputs;   // n
  nlohmann::json provenance; // generator spec + n; may be empty for raw CSVs

  std::int64_t size() const { return outputs.size(); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
};

// Runs the chain for burn_in + n steps and keeps the last n. Throws
// NumericError if |Y| exceeds 1e6 (diverging recursion).
SeriesDataset generate(const GeneratorSpec& spec, std::int64_t n);

// Diagnostic variant: starts the recursion from the given state (length d:
// autoregressive lag window, newest lag first; exogenous chain values) and
// keeps every step, with no burn-in discard. Used to observe how fast two
// chains started apart couple onto the same path.
SeriesDataset generate_from_state(const GeneratorSpec& spec, std::int64_t n,
                                  const Eigen::VectorXd& initial_state);

// Fresh draws from the input law of the chain (a new trajectory under a new
// seed); rows are eval points for Monte Carlo risk integrals.
Eigen::MatrixXd stationary_inputs(const GeneratorSpec& spec, std::int64_t count,
                                  std::uint64_t seed);

// Time-ordered head/tail split; no shuffling, the sample is dependent.
// Train size floor(n * train_fraction) clamped to [1, n-1]; needs n >= 2.
std::pair<SeriesDataset, SeriesDataset> split(const SeriesDataset& data, double train_fraction);

Eigen::VectorXd truth_values(const TruthFunction& truth, const SeriesDataset& data);
// Resolves the truth from provenance; throws ConfigError if absent.
Eigen::VectorXd truth_values(const SeriesDataset& data);

// CSV with header x0,...,x{d-1},y and %.17g values, plus a .json sidecar
// (same stem) holding provenance.
void save_dataset(const SeriesDataset& data, const std::filesystem::path& csv_path);
// Loads the CSV; picks up the sidecar when present.
SeriesDataset load_dataset(const std::filesystem::path& csv_path);

}  // namespace meedr
