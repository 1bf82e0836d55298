#pragma once

// Config-driven front end: generate, train, ablate, analyze and reproduce,
// each writing its artifacts under an output directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phydisc/analyze.hpp"
#include "phydisc/io.hpp"
#include "phydisc/reporting.hpp"

namespace phydisc {

enum class Scale { kFull, kDesk };

std::string to_string(Scale s);
Scale scale_from_string(const std::string& name);

struct AnalysisSettings {
  std::vector<std::size_t> indices;
  std::size_t m = 0;  ///< 0: whole grid
  std::size_t n = 0;  ///< 0: latent size
  bool operator==(const AnalysisSettings&) const = default;
};

struct ExperimentConfig {
  SystemKind system = SystemKind::kSchrodinger;
  LatentMode mode = LatentMode::kFirstOrder;
  Scale scale = Scale::kFull;
  std::uint64_t seed = 1;
  SystemSpec data;
  ModelSpec model;
  TrainConfig train;
  std::vector<std::size_t> ablation_dims;
  std::size_t restarts = 3;
  double knee_factor = 2.0;
  AnalysisSettings analysis;

  /// Built-in defaults for one system. Desk scale divides sample counts by
  /// 10 and epochs by 4, and uses 2 ablation restarts.
  static ExperimentConfig defaults(SystemKind system,
                                   LatentMode mode = LatentMode::kFirstOrder,
                                   Scale scale = Scale::kFull);

  /// Seeds the data and training streams from one value.
  void set_seed(std::uint64_t seed);
  /// Sets latent_dim and refreshes the dependent network sizes.
  void set_latent_dim(std::size_t dim);
  void set_samples(std::size_t samples);
  void set_epochs(std::size_t epochs);
  std::uint64_t init_seed() const;

  /// Throws ConfigError on inconsistent or out-of-range values.
  void validate() const;
  /// Canonical JSON (sorted keys, every field present).
  std::string to_json() const;
  /// FNV-1a of to_json(), as 16 hex digits.
  std::string hash() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses a config file. Start from the defaults of its "system" (and
/// optional "mode", "scale"), then apply "seed", then the "data", "model",
/// "train", "ablation" and "analysis" blocks. Unknown keys and bad values
/// throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const fs::path& file);

/// Progress messages for long commands; may be empty.
using Logger = std::function<void(const std::string&)>;

struct GenerateOutcome {
  Dataset data;
  fs::path path;
};
/// Writes `out` (binary if it ends in .bin, a text directory otherwise).
GenerateOutcome cmd_generate(const ExperimentConfig& cfg, const fs::path& out);

struct TrainOutcome {
  FitResult fit;
  fs::path checkpoint;
};
/// Writes checkpoint.json, metrics.jsonl and manifest.json under out_dir.
/// With resume, continues from out_dir/checkpoint.json.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const Dataset& data,
                       const fs::path& out_dir, bool resume = false,
                       const Logger& log = {});

/// Writes ablation.json, ablation.csv and loss_vs_dim.svg under out_dir.
AblationCurve cmd_ablate(const ExperimentConfig& cfg, const Dataset& data,
                         const fs::path& out_dir, const Logger& log = {});

/// Writes report.json, relative_errors.csv and the plot files under out_dir.
FitReport cmd_analyze(const Checkpoint& ckpt, const Dataset& data,
                      const AnalysisSettings& settings, const fs::path& out_dir);

/// Pass/fail bands for one reproduced system.
struct SystemCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SystemOutcome {
  SystemKind system = SystemKind::kSchrodinger;
  std::optional<AblationCurve> ablation;
  FitReport report;
  std::optional<FitReport> second_order;  ///< Newton only
  std::vector<SystemCheck> checks;
};

struct ReproduceOptions {
  Scale scale = Scale::kDesk;
  std::uint64_t seed = 1;
  std::vector<SystemKind> systems;  ///< empty: all four
  /// Replaces every system's epoch count when set (smoke runs).
  std::optional<std::size_t> epochs_override;
  std::optional<std::size_t> samples_override;
};

struct ReproduceReport {
  std::vector<SystemOutcome> systems;
  bool pass = true;
  /// Deterministic metrics payload, also written to metrics.json.
  std::string metrics_json;
};

/// generate -> (ablate) -> train -> analyze for each system, checked against
/// the relative-error bands; writes everything under out_dir.
ReproduceReport cmd_reproduce(const ReproduceOptions& options, const fs::path& out_dir,
                              const Logger& log = {});

/// Expected (m, n) of the relative-error table and the reference values.
struct TableRow {
  std::size_t m = 0, n = 0;
  double r_h = 0.0, r_f = 0.0;
};
TableRow reference_row(SystemKind system);

}  // namespace phydisc
