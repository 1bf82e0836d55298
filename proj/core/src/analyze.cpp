#include "phydisc/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "phydisc/errors.hpp"
#include "phydisc/parallel.hpp"

namespace phydisc {

namespace {

constexpr std::uint64_t kStreamAblation = 31;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// Least-squares projection of targets onto span(regressors, 1). Columns are
// standardized and numerically dependent ones ignored, so the fitted values
// exist even when the design is rank deficient.
Mat project_affine(const Mat& targets, const Mat& regressors) {
  const Eigen::Index k = regressors.rows();
  Mat design(k, regressors.cols() + 1);
  for (Eigen::Index j = 0; j < regressors.cols(); ++j) {
    auto c = design.col(j);
    c = regressors.col(j).array() - regressors.col(j).mean();
    const double norm = c.norm();
    if (norm > 0.0) c /= norm;
  }
  design.col(regressors.cols()).setConstant(1.0 / std::sqrt(static_cast<double>(k)));
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  qr.setThreshold(1e-10);
  return design * qr.solve(targets);
}

}  // namespace

LinearFit fit_linear(const Mat& targets, const Mat& regressors,
                     std::vector<std::string> names) {
  const Eigen::Index k = regressors.rows();
  const Eigen::Index p = regressors.cols();
  if (targets.rows() != k) throw ShapeError("fit_linear: row counts differ");
  if (k < p + 1) {
    throw ShapeError("fit_linear: need at least " + std::to_string(p + 1) +
                     " samples, got " + std::to_string(k));
  }
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
  }
  if (idx(names.size()) != p) throw ShapeError("fit_linear: one name per regressor");

  Mat design(k, p + 1);
  design.leftCols(p) = regressors;
  design.col(p).setOnes();
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p + 1) {
    std::vector<std::size_t> cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < p + 1; ++j) {
      cols.push_back(static_cast<std::size_t>(perm[j]));
    }
    std::sort(cols.begin(), cols.end());
    std::string list;
    for (std::size_t c : cols) {
      if (!list.empty()) list += ", ";
      list += c < names.size() ? names[c] : "intercept";
    }
    throw DegenerateFitError("rank-deficient design; collinear columns: " + list,
                             std::move(cols));
  }

  LinearFit fit;
  fit.regressors = std::move(names);
  const Mat beta = qr.solve(targets);  // (p + 1) x targets
  fit.coefficients = beta.transpose();
  fit.fitted = design * beta;
  fit.residuals = targets - fit.fitted;
  fit.r_squared.resize(targets.cols());
  for (Eigen::Index j = 0; j < targets.cols(); ++j) {
    const double mean = targets.col(j).mean();
    const double ss_tot = (targets.col(j).array() - mean).square().sum();
    const double ss_res = fit.residuals.col(j).squaredNorm();
    double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    fit.r_squared[j] = std::clamp(r2, 0.0, 1.0);
  }
  fit.max_abs_residual = fit.residuals.size() ? fit.residuals.cwiseAbs().maxCoeff() : 0.0;
  fit.rms_residual = fit.residuals.size()
                         ? std::sqrt(fit.residuals.squaredNorm() /
                                     static_cast<double>(fit.residuals.size()))
                         : 0.0;
  return fit;
}

namespace {

// OLS after removing regressor columns that are constant across samples.
// Dropped columns keep a zero coefficient so the layout stays fixed.
LinearFit fit_without_constants(const Mat& targets, const Mat& regressors,
                                std::vector<std::string> names) {
  if (names.empty()) {
    for (Eigen::Index j = 0; j < regressors.cols(); ++j) names.push_back("x" + std::to_string(j));
  }
  if (idx(names.size()) != regressors.cols()) {
    throw ShapeError("fit_linear: one name per regressor");
  }
  std::vector<Eigen::Index> keep;
  std::vector<std::string> dropped;
  for (Eigen::Index j = 0; j < regressors.cols(); ++j) {
    const auto c = regressors.col(j);
    const double spread = c.size() ? c.maxCoeff() - c.minCoeff() : 0.0;
    if (spread > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff())) {
      keep.push_back(j);
    } else {
      dropped.push_back(names[static_cast<std::size_t>(j)]);
    }
  }
  if (dropped.empty()) return fit_linear(targets, regressors, std::move(names));
  Mat x(regressors.rows(), idx(keep.size()));
  std::vector<std::string> kept_names;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    x.col(idx(j)) = regressors.col(keep[j]);
    kept_names.push_back(names[static_cast<std::size_t>(keep[j])]);
  }
  LinearFit fit = fit_linear(targets, x, std::move(kept_names));
  Mat full = Mat::Zero(targets.cols(), regressors.cols() + 1);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    full.col(keep[j]) = fit.coefficients.col(idx(j));
  }
  full.col(regressors.cols()) = fit.coefficients.col(idx(keep.size()));
  fit.coefficients = std::move(full);
  fit.regressors = std::move(names);
  fit.dropped = std::move(dropped);
  return fit;
}

}  // namespace

LinearFit fit_latent_linear(const Mat& latents, const Mat& truth,
                            std::vector<std::string> names) {
  return fit_without_constants(latents, truth, std::move(names));
}

LinearFit fit_field_linear(const Mat& field, const Mat& derivatives,
                           std::vector<std::string> names) {
  return fit_without_constants(field, derivatives, std::move(names));
}

ModelProbe probe_model(const ModelParams& params, const Dataset& data,
                       const std::vector<std::size_t>& rows,
                       const SolverConfig& cfg, std::size_t batch_size) {
  if (rows.empty()) throw ShapeError("probe_model: no rows");
  if (params.spec.system != data.spec.system) {
    throw ConfigError("probe_model: model and dataset systems differ");
  }
  if (batch_size == 0) batch_size = rows.size();
  const std::size_t grid = data.grid_size();
  const auto l = idx(params.spec.latent_dim);
  const auto total = idx(rows.size());
  const auto nc = idx(data.concept_dim());
  ModelProbe probe;
  probe.grid = data.spec.grid;
  probe.concept_names = concept_names(data.spec.system);
  probe.derivative_names = derivative_concept_names(data.spec.system);
  probe.latents.assign(grid, Mat(total, l));
  probe.field.assign(grid, Mat(total, l));
  probe.concepts.assign(grid, Mat(total, nc));
  probe.derivatives.assign(grid, Mat(total, nc));
  SolverConfig solver = cfg;
  solver.dense_grid = data.spec.grid;

  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t end = std::min(rows.size(), start + batch_size);
    const std::vector<std::size_t> chunk(rows.begin() + static_cast<long>(start),
                                         rows.begin() + static_cast<long>(end));
    const Batch batch = make_batch(data, chunk);
    const BatchControl control(data.spec.system, batch.controls);
    const BatchRollout r = rollout_batch(params, batch, control, solver);
    const LatentField field(params, control);
    const auto k = idx(chunk.size());
    Vec dh;
    for (std::size_t i = 0; i < grid; ++i) {
      field.rhs(data.spec.grid[i], r.trajectory.states[i], dh);
      probe.latents[i].middleRows(idx(start), k) =
          Eigen::Map<const Mat>(r.trajectory.states[i].data(), l, k).transpose();
      probe.field[i].middleRows(idx(start), k) =
          Eigen::Map<const Mat>(dh.data(), l, k).transpose();
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      const Sample& s = data.samples[chunk[static_cast<std::size_t>(j)]];
      const Mat der = concept_derivatives(data.spec, s);
      for (std::size_t i = 0; i < grid; ++i) {
        probe.concepts[i].row(idx(start) + j) = s.truth.row(idx(i));
        probe.derivatives[i].row(idx(start) + j) = der.row(idx(i));
      }
    }
  }
  return probe;
}

std::vector<IndexFits> probe_governing(const ModelProbe& probe,
                                       const std::vector<std::size_t>& indices) {
  std::vector<IndexFits> out;
  for (std::size_t i : indices) {
    if (i >= probe.latents.size()) {
      throw ShapeError("probe index " + std::to_string(i) + " outside the grid");
    }
    IndexFits f;
    f.grid_index = i;
    f.latent_fit = fit_latent_linear(probe.latents[i], probe.concepts[i], probe.concept_names);
    f.field_fit = fit_field_linear(probe.field[i], probe.derivatives[i], probe.derivative_names);
    out.push_back(std::move(f));
  }
  return out;
}

double relative_error(const std::vector<Mat>& actual, const std::vector<Mat>& fitted,
                      std::size_t m, std::size_t n, std::size_t* skipped) {
  if (actual.size() != fitted.size() || m > actual.size() || m == 0 || n == 0) {
    throw ShapeError("relative_error: bad index range");
  }
  double sum = 0.0;
  std::size_t used = 0, skip = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (idx(n) > actual[i].cols() || actual[i].rows() != fitted[i].rows() ||
        actual[i].cols() != fitted[i].cols()) {
      throw ShapeError("relative_error: shape mismatch at index " + std::to_string(i));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double denom = actual[i].col(idx(j)).norm();
      if (denom == 0.0) {
        ++skip;
        continue;
      }
      sum += (actual[i].col(idx(j)) - fitted[i].col(idx(j))).norm() / denom;
      ++used;
    }
  }
  if (skipped != nullptr) *skipped = skip;
  return used ? sum / static_cast<double>(used) : 0.0;
}

RelativeErrors relative_errors(const ModelProbe& probe, std::size_t m, std::size_t n) {
  if (m == 0 || m > probe.latents.size()) throw ShapeError("relative_errors: bad m");
  std::vector<Mat> h(m), h_fit(m), f(m), f_fit(m);
  parallel_for(m, [&](std::size_t i) {
    h[i] = probe.latents[i];
    h_fit[i] = project_affine(probe.latents[i], probe.concepts[i]);
    f[i] = probe.field[i];
    f_fit[i] = project_affine(probe.field[i], probe.derivatives[i]);
  });
  RelativeErrors out;
  out.m = m;
  out.n = n;
  out.r_h = relative_error(h, h_fit, m, n, &out.skipped_h);
  out.r_f = relative_error(f, f_fit, m, n, &out.skipped_f);
  return out;
}

std::vector<double> cross_concept_ratios(const Mat& latents, const Mat& truth) {
  Mat z = truth;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double mean = z.col(j).mean();
    z.col(j).array() -= mean;
    const double sd = std::sqrt(z.col(j).squaredNorm() / static_cast<double>(z.rows()));
    if (sd > 0.0) z.col(j) /= sd;
  }
  const LinearFit fit = fit_linear(latents, z);
  std::vector<double> ratios;
  for (Eigen::Index j = 0; j < fit.coefficients.rows(); ++j) {
    const Vec c = fit.coefficients.row(j).head(z.cols()).cwiseAbs();
    Eigen::Index primary = 0;
    const double top = c.maxCoeff(&primary);
    double cross = 0.0;
    for (Eigen::Index q = 0; q < c.size(); ++q) {
      if (q != primary) cross = std::max(cross, c[q]);
    }
    ratios.push_back(top > 0.0 ? cross / top : std::numeric_limits<double>::infinity());
  }
  return ratios;
}

std::size_t select_latent_dim(const std::vector<std::size_t>& dims,
                              const std::vector<double>& mean_loss, double knee_factor) {
  if (dims.empty() || dims.size() != mean_loss.size()) {
    throw ShapeError("select_latent_dim: dims and losses must align and be non-empty");
  }
  double best = std::numeric_limits<double>::infinity();
  for (double v : mean_loss) {
    if (std::isfinite(v)) best = std::min(best, v);
  }
  if (!std::isfinite(best)) throw Error("select_latent_dim: no finite losses");
  std::size_t chosen = 0;
  bool found = false;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (std::isfinite(mean_loss[i]) && mean_loss[i] <= knee_factor * best &&
        (!found || dims[i] < chosen)) {
      chosen = dims[i];
      found = true;
    }
  }
  return chosen;
}

std::size_t select_latent_dim(const AblationCurve& curve) {
  return select_latent_dim(curve.dims, curve.mean_loss, curve.knee_factor);
}

const AblationCell* best_cell(const AblationCurve& curve, std::size_t dim) {
  const AblationCell* best = nullptr;
  for (const auto& c : curve.cells) {
    if (c.dim == dim && c.ok && (best == nullptr || c.final_loss < best->final_loss)) best = &c;
  }
  return best;
}

std::vector<std::size_t> default_ablation_dims(SystemKind system) {
  if (system == SystemKind::kPauli) return {1, 2, 3, 4, 5};
  return {1, 2, 3, 4};
}

AblationCurve run_ablation(const Dataset& data, const TrainConfig& cfg,
                           const AblationOptions& options) {
  if (options.dims.empty()) throw ConfigError("ablation needs at least one dim");
  if (options.restarts == 0) throw ConfigError("ablation needs at least one restart");
  AblationCurve curve;
  curve.dims = options.dims;
  std::sort(curve.dims.begin(), curve.dims.end());
  curve.dims.erase(std::unique(curve.dims.begin(), curve.dims.end()), curve.dims.end());
  curve.knee_factor = options.knee_factor;

  for (std::size_t d : curve.dims) {
    for (std::size_t r = 0; r < options.restarts; ++r) {
      AblationCell cell;
      cell.dim = d;
      cell.restart = r;
      cell.seed = derive_seed(cfg.seed, kStreamAblation, d * 1000 + r);
      curve.cells.push_back(cell);
    }
  }
  std::vector<std::size_t> rows(data.samples.size());
  std::iota(rows.begin(), rows.end(), 0);

  parallel_for(
      curve.cells.size(),
      [&](std::size_t c) {
        AblationCell& cell = curve.cells[c];
        try {
          ModelSpec spec = options.base_spec != nullptr
                               ? *options.base_spec
                               : ModelSpec::defaults(data.spec.system, data.grid_size(),
                                                     cell.dim, options.mode);
          spec.latent_dim = cell.dim;
          spec.mode = options.mode;
          TrainConfig tc = cfg;
          tc.seed = cell.seed;
          const FitResult res = fit(init_model(spec, cell.seed), data, tc);
          cell.final_loss = evaluate_loss(res.params, data, rows, tc).total;
          cell.ok = std::isfinite(cell.final_loss);
          if (!cell.ok) cell.error = "non-finite final loss";
          if (cell.ok && options.keep_params) cell.params = res.params;
        } catch (const Error& e) {
          cell.ok = false;
          cell.error = e.what();
        }
      },
      options.workers ? options.workers : worker_count());

  for (std::size_t d : curve.dims) {
    std::vector<double> losses;
    for (const auto& cell : curve.cells) {
      if (cell.dim == d && cell.ok) losses.push_back(cell.final_loss);
    }
    if (losses.empty()) {
      throw TrainingAbort("ablation: every restart failed for latent dim " +
                              std::to_string(d),
                          0);
    }
    const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) /
                        static_cast<double>(losses.size());
    double var = 0.0;
    for (double v : losses) var += (v - mean) * (v - mean);
    curve.mean_loss.push_back(mean);
    curve.std_loss.push_back(std::sqrt(var / static_cast<double>(losses.size())));
  }
  curve.chosen_dim = select_latent_dim(curve);
  return curve;
}

}  // namespace phydisc
