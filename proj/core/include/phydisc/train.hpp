#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "phydisc/model.hpp"
#include "phydisc/odeint.hpp"

namespace phydisc {

enum class OptimizerKind { kRmsProp, kAdam, kBfgs };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);

struct PhaseSpec {
  OptimizerKind optimizer = OptimizerKind::kRmsProp;
  std::size_t epochs = 0;
  bool operator==(const PhaseSpec&) const = default;
};

/// RMSProp, Adam and BFGS phases holding 45%, 45% and the remainder of
/// `epochs`.
std::vector<PhaseSpec> default_schedule(std::size_t epochs);

struct TrainConfig {
  double beta = 0.0;
  double sigma_h = 0.1;
  std::size_t batch_size = 64;
  double lr_start = 0.01;
  double lr_end = 0.001;
  std::vector<PhaseSpec> schedule = default_schedule(0);
  double mre_weight = 0.0;
  std::uint64_t seed = 0;
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  std::size_t max_steps = 20000;

  /// Per-system defaults; epochs split by default_schedule.
  static TrainConfig defaults(SystemKind system,
                              LatentMode mode = LatentMode::kFirstOrder);
  std::size_t epochs() const;
  void set_epochs(std::size_t epochs) { schedule = default_schedule(epochs); }
  SolverConfig solver(const std::vector<double>& grid) const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;
  double mre = 0.0;
  double total = 0.0;
};

/// Mean of squared errors over grid index, observed variable and sample.
double reconstruction_loss(const std::vector<Mat>& x, const std::vector<Mat>& xhat);
/// Batch mean of 0.5 * sum_j (mu^2 + sigma^2) / sigma_h^2 - log sigma^2.
double kl_divergence(const Mat& mu, const Mat& sigma, double sigma_h);
/// Mean of |x - xhat| / (|x| + 1e-8).
double mre_regularizer(const std::vector<Mat>& x, const std::vector<Mat>& xhat);

struct LossGradient {
  LossBreakdown loss;
  Vec grad;  ///< flat, in ModelParams::flat() order
  std::uint64_t grad_hash = 0;
};

/// Loss on one batch and, if requested, its gradient through the adjoint.
LossGradient loss_and_gradient(const ModelParams& params, const Batch& batch,
                               const TrainConfig& cfg,
                               const std::vector<double>& grid,
                               bool with_gradient = true);

/// Sample-weighted loss over the given rows, evaluated in batch_size chunks.
LossBreakdown evaluate_loss(const ModelParams& params, const Dataset& data,
                            const std::vector<std::size_t>& rows,
                            const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  OptimizerKind optimizer = OptimizerKind::kRmsProp;
  double lr = 0.0;
  LossBreakdown loss;
  /// Hash of the last gradient as produced by the adjoint pass and as
  /// consumed by the optimizer.
  std::uint64_t grad_hash_computed = 0;
  std::uint64_t grad_hash_applied = 0;
};

struct FitOptions {
  std::size_t start_epoch = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::string bfgs_stop_reason;
};

/// Runs the optimizer schedule. Epochs are numbered globally; with
/// options.start_epoch > 0 the run resumes in the phase that epoch belongs
/// to. Throws TrainingAbort on a non-finite loss or a failed solve outside
/// the BFGS line search.
FitResult fit(const ModelParams& init, const Dataset& data,
              const TrainConfig& cfg, const FitOptions& options = {});

/// Learning rate of a stochastic epoch: geometric from lr_start to lr_end
/// across the RMSProp and Adam epochs.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

}  // namespace phydisc
