#pragma once

// Post-training analysis: latent-dimension ablation, linear fits of latent
// states and field outputs against ground-truth concepts, and the batch
// relative-error metrics R_h and R_f.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "phydisc/model.hpp"
#include "phydisc/train.hpp"

namespace phydisc {

/// Ordinary least squares of every target column on the regressor columns
/// plus an intercept.
struct LinearFit {
  std::vector<std::string> regressors;  ///< names; the intercept is implicit
  std::vector<std::string> dropped;     ///< constant regressors left out
  Mat coefficients;  ///< targets x (regressors + 1), intercept last
  Vec r_squared;     ///< per target, in [0, 1]
  Mat fitted;        ///< samples x targets
  Mat residuals;     ///< samples x targets
  double max_abs_residual = 0.0;
  double rms_residual = 0.0;
};

/// Throws DegenerateFitError naming the collinear design columns when the
/// design matrix (regressors plus intercept) is rank deficient, and
/// ShapeError when there are fewer samples than design columns.
LinearFit fit_linear(const Mat& targets, const Mat& regressors,
                     std::vector<std::string> names = {});

/// Latent states (samples x latent) against concepts (samples x concepts).
/// Concept columns that are constant across samples (a shared initial
/// condition, say) are carried by the intercept: they are left out of the
/// design, listed in `dropped` and given a zero coefficient.
LinearFit fit_latent_linear(const Mat& latents, const Mat& truth,
                            std::vector<std::string> names = {});

/// Field outputs against derivative concepts, constant columns handled as
/// in fit_latent_linear.
LinearFit fit_field_linear(const Mat& field, const Mat& derivatives,
                           std::vector<std::string> names = {});

/// Model quantities and ground truth at every grid index for a set of rows.
struct ModelProbe {
  std::vector<double> grid;
  std::vector<Mat> latents;      ///< per index, samples x latent
  std::vector<Mat> field;        ///< per index, samples x latent (dh/dt)
  std::vector<Mat> concepts;     ///< per index, samples x concepts
  std::vector<Mat> derivatives;  ///< per index, samples x concepts
  std::vector<std::string> concept_names;
  std::vector<std::string> derivative_names;
};

/// Rolls the model out over `rows` (in chunks of batch_size) and evaluates
/// the full latent right-hand side at every grid point.
ModelProbe probe_model(const ModelParams& params, const Dataset& data,
                       const std::vector<std::size_t>& rows,
                       const SolverConfig& cfg, std::size_t batch_size = 64);

struct IndexFits {
  std::size_t grid_index = 0;
  LinearFit latent_fit;
  LinearFit field_fit;
};

/// Latent and field fits at the requested grid indices.
std::vector<IndexFits> probe_governing(const ModelProbe& probe,
                                       const std::vector<std::size_t>& indices);

struct RelativeErrors {
  double r_h = 0.0;
  double r_f = 0.0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t skipped_h = 0;  ///< (index, dim) pairs with a zero-norm target
  std::size_t skipped_f = 0;
};

/// (1 / mn) sum_i sum_j |a_j(i) - b_j(i)| / |a_j(i)| over the first m
/// indices and n columns, each a_j(i) being the vector over samples. Pairs
/// with |a_j(i)| = 0 are left out of the mean and counted in `skipped`.
double relative_error(const std::vector<Mat>& actual, const std::vector<Mat>& fitted,
                      std::size_t m, std::size_t n, std::size_t* skipped = nullptr);

/// R_h and R_f with per-index fits over the first m indices and n latents.
/// The fitted values are least-squares projections, so near-collinear
/// concepts (early Pauli positions) do not raise DegenerateFitError here.
RelativeErrors relative_errors(const ModelProbe& probe, std::size_t m, std::size_t n);

/// For each latent: the largest cross-concept coefficient magnitude over the
/// primary (largest) one, with concepts standardised to unit variance so
/// the comparison does not depend on their units.
std::vector<double> cross_concept_ratios(const Mat& latents, const Mat& truth);

struct AblationCell {
  std::size_t dim = 0;
  std::size_t restart = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double final_loss = 0.0;
  std::string error;
  std::optional<ModelParams> params;  ///< kept with AblationOptions::keep_params
};

struct AblationCurve {
  std::vector<std::size_t> dims;
  std::vector<double> mean_loss;
  std::vector<double> std_loss;
  std::vector<AblationCell> cells;
  double knee_factor = 2.0;
  std::size_t chosen_dim = 0;
};

/// Successful cell of `dim` with the lowest final loss, or nullptr.
const AblationCell* best_cell(const AblationCurve& curve, std::size_t dim);

/// Smallest dim whose mean loss is at most knee_factor times the minimum.
std::size_t select_latent_dim(const std::vector<std::size_t>& dims,
                              const std::vector<double>& mean_loss,
                              double knee_factor = 2.0);
std::size_t select_latent_dim(const AblationCurve& curve);

struct AblationOptions {
  std::vector<std::size_t> dims;
  std::size_t restarts = 3;
  double knee_factor = 2.0;
  LatentMode mode = LatentMode::kFirstOrder;
  std::size_t workers = 0;  ///< 0 means worker_count()
  bool keep_params = false;
  /// Optional network override; latent_dim and mode are set per cell.
  const ModelSpec* base_spec = nullptr;
};

/// Trains one model per (dim, restart) with seeds derived from cfg.seed and
/// records the final full-dataset loss. Failed cells are kept with their
/// error; every dim needs at least one successful restart.
AblationCurve run_ablation(const Dataset& data, const TrainConfig& cfg,
                           const AblationOptions& options);

/// Default ablation dims per system: 1-4, or 1-5 for Pauli.
std::vector<std::size_t> default_ablation_dims(SystemKind system);

}  // namespace phydisc
