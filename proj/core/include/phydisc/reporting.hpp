#pragma once

// Fit reports and plot data: the R_h / R_f table, per-index latent and
// field fits, CSV series and a small SVG renderer for them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phydisc/analyze.hpp"

namespace phydisc {

struct FitReport {
  SystemKind system = SystemKind::kSchrodinger;
  LatentMode mode = LatentMode::kFirstOrder;
  std::size_t latent_dim = 0;
  std::size_t samples = 0;
  RelativeErrors errors;
  std::vector<IndexFits> fits;
  /// Per latent, over the probed indices: worst cross-concept ratio.
  std::vector<double> cross_concept;
  /// Second-order runs: R^2 of each acceleration latent's field output
  /// regressed on its own second-derivative concept alone, worst over the
  /// probed indices.
  std::vector<double> acceleration_r2;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<std::string> warnings;
};

/// Probes the model over `rows`, fits at `indices` and computes R_h(m, n),
/// R_f(m, n). m = 0 means the whole grid, n = 0 the latent size. Degenerate
/// fits at a probed index are reported as warnings, while those inside the
/// R_h / R_f range propagate.
FitReport build_fit_report(const ModelParams& params, const Dataset& data,
                           const std::vector<std::size_t>& rows,
                           const SolverConfig& solver,
                           const std::vector<std::size_t>& indices, std::size_t m,
                           std::size_t n, ModelProbe* probe_out = nullptr);

std::string fit_report_json(const FitReport& report);
std::string ablation_json(const AblationCurve& curve, SystemKind system,
                          const std::string& config_hash);

/// One row per system in the layout of the relative-error table.
std::string relative_error_csv(const std::vector<FitReport>& reports);
/// index,sample,<latents...>,<concepts...>
std::string latent_vs_truth_csv(const ModelProbe& probe, const std::vector<std::size_t>& indices);
/// index,sample,dim,f,predicted
std::string field_vs_expected_csv(const ModelProbe& probe, const FitReport& report);
/// dim,restart,ok,final_loss and dim,mean,std rows
std::string ablation_csv(const AblationCurve& curve);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool line = false;  ///< polyline; markers otherwise
};

/// Minimal static SVG: axes with min/max tick labels, one colour per series.
std::string render_svg(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<PlotSeries>& series,
                       bool log_y = false);

std::string format_double(double v);

}  // namespace phydisc
