#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "meedr/data.hpp"
#include "meedr/density.hpp"
#include "meedr/network.hpp"
#include "meedr/penalty.hpp"

namespace meedr {

enum class Optimizer { adam, momentum };

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double step_size = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 1;
  // Constrained fits re-project onto the sparsity budget every prune_every
  // epochs and always at termination.
  int prune_every = 10;
  bool record_history = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  double risk;     // full-sample training risk at the end of the epoch
  double penalty;  // penalty term at the same point (0 when unpenalized)
};

struct TrainResult {
  Network net;
  std::vector<EpochRecord> history;
  bool diverged = false;   // optimizer hit non-finite values; net is the last good state
  double final_risk = 0.0;
  double final_penalty = 0.0;
};

// Mean negative log density of the residuals over a whole dataset.
double empirical_risk(const Network& net, const SeriesDataset& data, const ErrorDensity& f);
// Mean squared residual (reporting metric).
double empirical_mse(const Network& net, const SeriesDataset& data);

// Entropy fit under a known error density, constrained to the architecture's
// weight box and (when set) sparsity budget via periodic magnitude pruning.
TrainResult train_npdnn(const SeriesDataset& data, const Architecture& arch,
                        const ErrorDensity& f, const TrainConfig& config);

// Entropy fit with the clipped-L1 penalty added to the objective; sparsity
// comes from the penalty, so no hard pruning is applied.
TrainResult train_spdnn(const SeriesDataset& data, const Architecture& arch,
                        const ErrorDensity& f, const PenaltySpec& penalty,
                        const TrainConfig& config);

// Squared-error fit under the same box/pruning policy as train_npdnn.
TrainResult train_least_squares(const SeriesDataset& data, const Architecture& arch,
                                const TrainConfig& config);

// Entropy fit where the residual density is unknown and replaced by a Parzen
// plug-in over the current residuals (one full-batch step per epoch,
// quadratic in n). bandwidth <= 0 selects Silverman's rule from the initial
// residuals, computed once and then held fixed. With a penalty the objective
// is penalized; otherwise the architecture's sparsity budget (if any) is
// enforced by pruning.
TrainResult train_kernel_mee(const SeriesDataset& data, const Architecture& arch,
                             const TrainConfig& config,
                             const std::optional<PenaltySpec>& penalty = std::nullopt,
                             double bandwidth = 0.0,
                             KernelKind kernel = KernelKind::gaussian);

// epoch,risk,penalty,objective rows, epochs numbered from 1.
void write_history_csv(const TrainResult& result, const std::filesystem::path& path);

}  // namespace meedr
