#include "phydisc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_codec.hpp"
#include "phydisc/errors.hpp"
#include "phydisc/optimizers.hpp"

namespace phydisc {

namespace {

using codec::json;

constexpr std::uint64_t kStreamInit = 40;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::size_t> default_indices(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus:
    case SystemKind::kSchrodinger: return {10, 25, 40};
    default: return {25, 50, 75};
  }
}

std::size_t default_latent(SystemKind s) { return s == SystemKind::kPauli ? 4 : 2; }

void note(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> rows(d.samples.size());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void check_data_matches(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.spec.system != cfg.system) {
    throw ConfigError("dataset is " + to_string(data.spec.system) + " but the config is " +
                      to_string(cfg.system));
  }
  const ModelSpec want = ModelSpec::defaults(cfg.system, data.grid_size(),
                                             cfg.model.latent_dim, cfg.model.mode);
  if (want.encoder_input_dim != cfg.model.encoder_input_dim ||
      want.obs_dim != cfg.model.obs_dim || want.control_dim != cfg.model.control_dim) {
    throw ConfigError("dataset grid of " + std::to_string(data.grid_size()) +
                      " points does not fit the model input sizes");
  }
  if (data.samples.empty()) throw ConfigError("dataset has no samples");
}

void write_json_file(const fs::path& file, const json& j) {
  write_file_atomic(file, j.dump(2) + "\n");
}

}  // namespace

std::string to_string(Scale s) { return s == Scale::kDesk ? "desk" : "full"; }

Scale scale_from_string(const std::string& name) {
  if (name == "desk") return Scale::kDesk;
  if (name == "full") return Scale::kFull;
  throw ConfigError("unknown scale '" + name + "' (expected desk or full)");
}

ExperimentConfig ExperimentConfig::defaults(SystemKind system, LatentMode mode, Scale scale) {
  ExperimentConfig c;
  c.system = system;
  c.mode = mode;
  c.scale = scale;
  c.data = SystemSpec::defaults(system);
  c.model = ModelSpec::defaults(system, c.data.grid.size(), default_latent(system), mode);
  c.train = TrainConfig::defaults(system, mode);
  c.ablation_dims = default_ablation_dims(system);
  if (mode == LatentMode::kSecondOrder) {
    c.ablation_dims.erase(std::remove_if(c.ablation_dims.begin(), c.ablation_dims.end(),
                                         [](std::size_t d) { return d % 2 != 0; }),
                          c.ablation_dims.end());
  }
  c.analysis.indices = default_indices(system);
  if (scale == Scale::kDesk) {
    c.data.sample_count = std::max<std::size_t>(1, c.data.sample_count / 10);
    c.train.set_epochs(c.train.epochs() / 4);
    c.restarts = 2;
  }
  c.set_seed(1);
  return c;
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
}

void ExperimentConfig::set_latent_dim(std::size_t dim) {
  const ModelSpec d = ModelSpec::defaults(system, data.grid.size(), dim, model.mode);
  model.latent_dim = dim;
  model.encoder_input_dim = d.encoder_input_dim;
  model.obs_dim = d.obs_dim;
  model.control_dim = d.control_dim;
}

void ExperimentConfig::set_samples(std::size_t samples) { data.sample_count = samples; }

void ExperimentConfig::set_epochs(std::size_t epochs) { train.set_epochs(epochs); }

std::uint64_t ExperimentConfig::init_seed() const { return derive_seed(seed, kStreamInit, 0); }

void ExperimentConfig::validate() const {
  if (data.system != system || model.system != system) {
    throw ConfigError("data and model blocks must use the config system");
  }
  if (model.mode != mode) throw ConfigError("model mode differs from the config mode");
  data.validate();
  model.validate();
  train.validate();
  const ModelSpec want = ModelSpec::defaults(system, data.grid.size(), model.latent_dim, mode);
  if (want.encoder_input_dim != model.encoder_input_dim || want.obs_dim != model.obs_dim ||
      want.control_dim != model.control_dim) {
    throw ConfigError("model input/output sizes do not match the system and grid");
  }
  if (system == SystemKind::kNewton && mode == LatentMode::kSecondOrder &&
      model.latent_dim != 2) {
    throw ConfigError("second-order Newton uses exactly 2 latent dims");
  }
  if (ablation_dims.empty()) throw ConfigError("ablation.dims must not be empty");
  for (std::size_t d : ablation_dims) {
    if (d == 0) throw ConfigError("ablation dims must be positive");
    if (mode == LatentMode::kSecondOrder && d % 2 != 0) {
      throw ConfigError("second-order ablation dims must be even");
    }
  }
  if (restarts == 0) throw ConfigError("ablation.restarts must be at least 1");
  if (!(knee_factor >= 1.0) || !std::isfinite(knee_factor)) {
    throw ConfigError("ablation.knee_factor must be a finite value >= 1");
  }
  for (std::size_t i : analysis.indices) {
    if (i >= data.grid.size()) {
      throw ConfigError("analysis index " + std::to_string(i) + " outside the grid");
    }
  }
  if (analysis.m > data.grid.size()) throw ConfigError("analysis.m exceeds the grid size");
  if (analysis.n > model.latent_dim) throw ConfigError("analysis.n exceeds the latent size");
}

std::string ExperimentConfig::to_json() const {
  json j{{"system", to_string(system)},
         {"mode", to_string(mode)},
         {"scale", phydisc::to_string(scale)},
         {"seed", seed},
         {"data", codec::to_json(data)},
         {"model", codec::to_json(model)},
         {"train", codec::to_json(train)},
         {"ablation", {{"dims", ablation_dims}, {"restarts", restarts}, {"knee_factor", knee_factor}}},
         {"analysis", {{"indices", analysis.indices}, {"m", analysis.m}, {"n", analysis.n}}}};
  return j.dump(2) + "\n";
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(to_json())); }

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  codec::require_object(j, "config");
  codec::reject_unknown(
      j, {"system", "mode", "scale", "seed", "data", "model", "train", "ablation", "analysis"},
      "config");
  if (!j.contains("system")) throw ConfigError("config: 'system' is required");
  std::string name;
  codec::read(j, "system", name, "config");
  SystemKind system;
  LatentMode mode = LatentMode::kFirstOrder;
  Scale scale = Scale::kFull;
  try {
    system = system_from_string(name);
    if (j.contains("mode")) {
      codec::read(j, "mode", name, "config");
      mode = latent_mode_from_string(name);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("scale")) {
    codec::read(j, "scale", name, "config");
    scale = scale_from_string(name);
  }
  ExperimentConfig c = ExperimentConfig::defaults(system, mode, scale);
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    codec::read(j, "seed", s, "config");
    c.set_seed(s);
  }
  if (j.contains("data")) codec::from_json(j.at("data"), c.data, "config.data");
  if (j.contains("model")) {
    const json& m = j.at("model");
    codec::require_object(m, "config.model");
    std::size_t latent = c.model.latent_dim;
    codec::read(m, "latent_dim", latent, "config.model");
    c.set_latent_dim(latent);
    codec::from_json(m, c.model, "config.model");
  } else {
    c.set_latent_dim(c.model.latent_dim);
  }
  if (j.contains("train")) codec::from_json(j.at("train"), c.train, "config.train");
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    codec::require_object(a, "config.ablation");
    codec::reject_unknown(a, {"dims", "restarts", "knee_factor"}, "config.ablation");
    codec::read(a, "dims", c.ablation_dims, "config.ablation");
    codec::read(a, "restarts", c.restarts, "config.ablation");
    codec::read(a, "knee_factor", c.knee_factor, "config.ablation");
  }
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    codec::require_object(a, "config.analysis");
    codec::reject_unknown(a, {"indices", "m", "n"}, "config.analysis");
    codec::read(a, "indices", c.analysis.indices, "config.analysis");
    codec::read(a, "m", c.analysis.m, "config.analysis");
    codec::read(a, "n", c.analysis.n, "config.analysis");
  }
  if (c.model.system != system) throw ConfigError("config.model.system differs from system");
  if (c.model.mode != mode) throw ConfigError("config.model.mode differs from mode");
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::string text;
  try {
    text = read_file(file);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

GenerateOutcome cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  GenerateOutcome g;
  g.data = generate(cfg.data);
  g.path = out;
  save_dataset(g.data, out, {cfg.hash(), "seed " + std::to_string(cfg.seed)});
  return g;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const Dataset& data,
                       const fs::path& out_dir, bool resume, const Logger& log) {
  cfg.validate();
  check_data_matches(cfg, data);
  const std::uint64_t dhash = dataset_hash(data);
  const fs::path ckpt_path = out_dir / "checkpoint.json";
  const fs::path metrics_path = out_dir / "metrics.jsonl";

  std::optional<ModelParams> init;
  std::size_t start = 0;
  std::string metrics;
  if (resume) {
    Checkpoint prev = load_checkpoint(ckpt_path);
    if (!(prev.params.spec == cfg.model)) {
      throw ConfigError("checkpoint model does not match the config");
    }
    if (prev.dataset_hash != dhash) {
      throw ConfigError("checkpoint was trained on a different dataset");
    }
    start = prev.epochs_done;
    init = std::move(prev.params);
    if (fs::exists(metrics_path)) {
      std::istringstream in(read_file(metrics_path));
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        if (parse_metrics_line(line).epoch < start) metrics += line + "\n";
      }
    }
    note(log, "resuming at epoch " + std::to_string(start));
  } else {
    init = init_model(cfg.model, cfg.init_seed());
  }

  FitOptions opts;
  opts.start_epoch = start;
  const std::size_t total = cfg.train.epochs();
  const std::size_t every = std::max<std::size_t>(1, total / 20);
  opts.on_epoch = [&](const EpochRecord& r) {
    metrics += metrics_line(r) + "\n";
    if (r.epoch % every == 0 || r.epoch + 1 == total) {
      note(log, "epoch " + std::to_string(r.epoch) + " " + to_string(r.optimizer) +
                    " loss " + format_double(r.loss.total));
    }
  };
  TrainOutcome out{fit(*init, data, cfg.train, opts), ckpt_path};

  Checkpoint ckpt{out.fit.params};
  ckpt.train = cfg.train;
  ckpt.epochs_done = std::max(start, total);
  ckpt.dataset_hash = dhash;
  ckpt.provenance = {cfg.hash(), "seed " + std::to_string(cfg.seed)};
  save_checkpoint(ckpt, ckpt_path);
  write_file_atomic(metrics_path, metrics);
  const LossBreakdown final_loss = evaluate_loss(out.fit.params, data, all_rows(data), cfg.train);
  json manifest{{"config_hash", cfg.hash()},
                {"config", json::parse(cfg.to_json())},
                {"seed", cfg.seed},
                {"init_seed", cfg.init_seed()},
                {"dataset_hash", hex64(dhash)},
                {"generator_version", data.generator_version},
                {"samples", data.samples.size()},
                {"beta", cfg.train.beta},
                {"epochs", total},
                {"resumed_from", start},
                {"bfgs", "limited-memory, history 10, strong Wolfe line search"},
                {"bfgs_stop_reason", out.fit.bfgs_stop_reason},
                {"final_loss",
                 {{"reconstruction", final_loss.reconstruction},
                  {"kl", final_loss.kl},
                  {"mre", final_loss.mre},
                  {"total", final_loss.total}}}};
  write_json_file(out_dir / "manifest.json", manifest);
  return out;
}

namespace {

AblationCurve ablate_to(const ExperimentConfig& cfg, const Dataset& data,
                        const fs::path& out_dir, bool keep_params, const Logger& log) {
  cfg.validate();
  check_data_matches(cfg, data);
  AblationOptions opt;
  opt.dims = cfg.ablation_dims;
  opt.restarts = cfg.restarts;
  opt.knee_factor = cfg.knee_factor;
  opt.mode = cfg.mode;
  opt.base_spec = &cfg.model;
  opt.keep_params = keep_params;
  note(log, "ablation over " + std::to_string(cfg.ablation_dims.size()) + " dims x " +
                std::to_string(cfg.restarts) + " restarts");
  AblationCurve curve = run_ablation(data, cfg.train, opt);
  write_file_atomic(out_dir / "ablation.json", ablation_json(curve, cfg.system, cfg.hash()));
  write_file_atomic(out_dir / "ablation.csv", ablation_csv(curve));
  std::vector<double> x(curve.dims.begin(), curve.dims.end());
  std::vector<PlotSeries> series{{"mean loss", x, curve.mean_loss, true}};
  PlotSeries cells{"restarts", {}, {}, false};
  for (const auto& c : curve.cells) {
    if (!c.ok) continue;
    cells.x.push_back(static_cast<double>(c.dim));
    cells.y.push_back(c.final_loss);
  }
  series.push_back(cells);
  write_file_atomic(out_dir / "loss_vs_dim.svg",
                    render_svg(to_string(cfg.system) + ": loss vs latent dim", "latent dim",
                               "final loss", series, true));
  note(log, "chosen latent dim " + std::to_string(curve.chosen_dim));
  return curve;
}

FitReport analyze_to(const ModelParams& params, const TrainConfig& train, const Dataset& data,
                     const AnalysisSettings& settings, const fs::path& out_dir,
                     const std::string& config_hash) {
  if (params.spec.system != data.spec.system) {
    throw ConfigError("checkpoint is " + to_string(params.spec.system) + " but the dataset is " +
                      to_string(data.spec.system));
  }
  const ModelSpec want = ModelSpec::defaults(data.spec.system, data.grid_size(),
                                             params.spec.latent_dim, params.spec.mode);
  if (want.encoder_input_dim != params.spec.encoder_input_dim) {
    throw ConfigError("dataset grid does not fit the checkpoint's encoder");
  }
  ModelProbe probe;
  FitReport r = build_fit_report(params, data, all_rows(data), train.solver(data.spec.grid),
                                 settings.indices, settings.m, settings.n, &probe);
  r.config_hash = config_hash;
  r.seed = train.seed;
  r.dataset_hash = dataset_hash(data);
  write_file_atomic(out_dir / "report.json", fit_report_json(r));
  write_file_atomic(out_dir / "relative_errors.csv", relative_error_csv({r}));
  write_file_atomic(out_dir / "latent_vs_truth.csv", latent_vs_truth_csv(probe, settings.indices));
  write_file_atomic(out_dir / "field_vs_expected.csv", field_vs_expected_csv(probe, r));
  std::vector<PlotSeries> lat, fld;
  for (const auto& f : r.fits) {
    for (Eigen::Index j = 0; j < f.latent_fit.fitted.cols(); ++j) {
      const Mat& h = probe.latents[f.grid_index];
      PlotSeries s{"x" + std::to_string(f.grid_index) + " h" + std::to_string(j), {}, {}, false};
      for (Eigen::Index k = 0; k < h.rows(); ++k) {
        s.x.push_back(f.latent_fit.fitted(k, j));
        s.y.push_back(h(k, j));
      }
      lat.push_back(std::move(s));
    }
    for (Eigen::Index j = 0; j < f.field_fit.fitted.cols(); ++j) {
      const Mat& fv = probe.field[f.grid_index];
      PlotSeries s{"x" + std::to_string(f.grid_index) + " f" + std::to_string(j), {}, {}, false};
      for (Eigen::Index k = 0; k < fv.rows(); ++k) {
        s.x.push_back(f.field_fit.fitted(k, j));
        s.y.push_back(fv(k, j));
      }
      fld.push_back(std::move(s));
    }
  }
  write_file_atomic(out_dir / "latent_vs_truth.svg",
                    render_svg(to_string(r.system) + ": latents vs linear fit", "fitted",
                               "latent", lat));
  write_file_atomic(out_dir / "f_vs_expected.svg",
                    render_svg(to_string(r.system) + ": field vs linear fit", "fitted",
                               "field output", fld));
  return r;
}

}  // namespace

AblationCurve cmd_ablate(const ExperimentConfig& cfg, const Dataset& data,
                         const fs::path& out_dir, const Logger& log) {
  return ablate_to(cfg, data, out_dir, false, log);
}

FitReport cmd_analyze(const Checkpoint& ckpt, const Dataset& data,
                      const AnalysisSettings& settings, const fs::path& out_dir) {
  FitReport r = analyze_to(ckpt.params, ckpt.train, data, settings, out_dir,
                           ckpt.provenance.config_hash);
  if (ckpt.dataset_hash != 0 && ckpt.dataset_hash != r.dataset_hash) {
    r.warnings.push_back("dataset differs from the training dataset");
    write_file_atomic(out_dir / "report.json", fit_report_json(r));
  }
  return r;
}

TableRow reference_row(SystemKind system) {
  switch (system) {
    case SystemKind::kCopernicus: return {50, 2, 0.03, 0.1};
    case SystemKind::kNewton: return {100, 2, 0.01, 0.03};
    case SystemKind::kSchrodinger: return {50, 2, 0.01, 0.01};
    case SystemKind::kPauli: return {100, 4, 0.02, 0.08};
  }
  return {};
}

namespace {

SystemCheck check_le(const std::string& name, double value, double bound) {
  return {name, std::isfinite(value) && value <= bound,
          format_double(value) + " <= " + format_double(bound)};
}

// Relaxed R_h / R_f bands; Copernicus has none and is reported only.
std::optional<std::pair<double, double>> bands(SystemKind s) {
  switch (s) {
    case SystemKind::kNewton: return std::pair{0.05, 0.10};
    case SystemKind::kSchrodinger: return std::pair{0.05, 0.05};
    case SystemKind::kPauli: return std::pair{0.10, 0.20};
    default: return std::nullopt;
  }
}

json report_metrics(const FitReport& r) {
  json fits = json::array();
  for (const auto& f : r.fits) {
    fits.push_back({{"index", f.grid_index},
                    {"latent_r2", std::vector<double>(f.latent_fit.r_squared.data(),
                                                      f.latent_fit.r_squared.data() +
                                                          f.latent_fit.r_squared.size())},
                    {"field_r2", std::vector<double>(f.field_fit.r_squared.data(),
                                                     f.field_fit.r_squared.data() +
                                                         f.field_fit.r_squared.size())}});
  }
  return json{{"mode", to_string(r.mode)},
              {"latent_dim", r.latent_dim},
              {"m", r.errors.m},
              {"n", r.errors.n},
              {"R_h", r.errors.r_h},
              {"R_f", r.errors.r_f},
              {"fits", fits},
              {"cross_concept_ratio", r.cross_concept},
              {"acceleration_r2", r.acceleration_r2},
              {"dataset_hash", hex64(r.dataset_hash)},
              {"config_hash", r.config_hash}};
}

}  // namespace

ReproduceReport cmd_reproduce(const ReproduceOptions& options, const fs::path& out_dir,
                              const Logger& log) {
  std::vector<SystemKind> systems = options.systems;
  if (systems.empty()) systems = all_systems();
  ReproduceReport rep;
  json sys_json = json::array();
  std::vector<FitReport> table;

  for (SystemKind system : systems) {
    const std::string name = to_string(system);
    const fs::path dir = out_dir / name;
    note(log, "== " + name + " (" + to_string(options.scale) + " scale)");
    ExperimentConfig cfg = ExperimentConfig::defaults(system, LatentMode::kFirstOrder,
                                                      options.scale);
    cfg.set_seed(options.seed);
    if (options.samples_override) cfg.set_samples(*options.samples_override);
    if (options.epochs_override) cfg.set_epochs(*options.epochs_override);
    const TableRow ref = reference_row(system);
    cfg.set_latent_dim(ref.n);
    cfg.analysis.m = ref.m;
    cfg.analysis.n = ref.n;
    write_file_atomic(dir / "config.json", cfg.to_json());

    SystemOutcome out;
    out.system = system;
    const Dataset data = cmd_generate(cfg, dir / "dataset.bin").data;
    note(log, "generated " + std::to_string(data.samples.size()) + " samples");

    std::optional<ModelParams> params;
    const bool ablate = system == SystemKind::kSchrodinger || system == SystemKind::kPauli;
    if (ablate) {
      out.ablation = ablate_to(cfg, data, dir / "ablation", true, log);
      const AblationCell* best = best_cell(*out.ablation, ref.n);
      if (best == nullptr || !best->params) {
        throw TrainingAbort("no successful restart at latent dim " + std::to_string(ref.n), 0);
      }
      params = *best->params;
      TrainConfig tc = cfg.train;
      tc.seed = best->seed;
      Checkpoint ck{*params};
      ck.train = tc;
      ck.epochs_done = tc.epochs();
      ck.dataset_hash = dataset_hash(data);
      ck.provenance = {cfg.hash(), "ablation dim " + std::to_string(ref.n) + " restart " +
                                       std::to_string(best->restart)};
      save_checkpoint(ck, dir / "ablation" / "checkpoint.json");
    } else {
      params = cmd_train(cfg, data, dir / "train", false, log).fit.params;
    }
    out.report = analyze_to(*params, cfg.train, data, cfg.analysis, dir / "analysis", cfg.hash());

    if (const auto b = bands(system)) {
      const std::string mn = "(" + std::to_string(ref.m) + "," + std::to_string(ref.n) + ")";
      out.checks.push_back(check_le("R_h" + mn, out.report.errors.r_h, b->first));
      out.checks.push_back(check_le("R_f" + mn, out.report.errors.r_f, b->second));
    }
    if (out.ablation) {
      const std::size_t want = system == SystemKind::kPauli ? 4 : 2;
      out.checks.push_back({"chosen_dim", out.ablation->chosen_dim == want,
                            std::to_string(out.ablation->chosen_dim) + " == " +
                                std::to_string(want)});
    }
    if (system == SystemKind::kSchrodinger && out.ablation) {
      const auto& c = *out.ablation;
      const auto at = [&](std::size_t d) {
        for (std::size_t i = 0; i < c.dims.size(); ++i) {
          if (c.dims[i] == d) return c.mean_loss[i];
        }
        return std::numeric_limits<double>::quiet_NaN();
      };
      const double l1 = at(1), l2 = at(2);
      out.checks.push_back({"loss(1) >= 2 loss(2)", l1 >= 2.0 * l2,
                            format_double(l1) + " vs " + format_double(l2)});
      double worst = 1.0;
      bool all_present = out.report.fits.size() == cfg.analysis.indices.size();
      for (const auto& f : out.report.fits) worst = std::min(worst, f.latent_fit.r_squared.minCoeff());
      out.checks.push_back({"planar R^2 >= 0.95", all_present && worst >= 0.95,
                            "min " + format_double(worst)});
    }
    if (system == SystemKind::kNewton) {
      ExperimentConfig so = ExperimentConfig::defaults(system, LatentMode::kSecondOrder,
                                                       options.scale);
      so.set_seed(options.seed);
      if (options.samples_override) so.set_samples(*options.samples_override);
      if (options.epochs_override) so.set_epochs(*options.epochs_override);
      so.analysis.m = ref.m;
      so.analysis.n = ref.n;
      note(log, "second-order run");
      const ModelParams p2 = cmd_train(so, data, dir / "second_order", false, log).fit.params;
      out.second_order = analyze_to(p2, so.train, data, so.analysis,
                                    dir / "second_order" / "analysis", so.hash());
      const auto& cc = out.second_order->cross_concept;
      const double worst = cc.empty() ? std::numeric_limits<double>::infinity()
                                      : *std::max_element(cc.begin(), cc.end());
      out.checks.push_back({"second-order cross-concept < 0.1", worst < 0.1,
                            "max ratio " + format_double(worst)});
      const auto& ar = out.second_order->acceleration_r2;
      const double acc = ar.empty() ? std::numeric_limits<double>::quiet_NaN() : ar.front();
      out.checks.push_back({"second-order f vs r'' R^2 >= 0.95", acc >= 0.95,
                            "min " + format_double(acc)});
    }

    bool pass = true;
    json checks = json::array();
    for (const auto& c : out.checks) {
      pass = pass && c.pass;
      checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
      note(log, std::string(c.pass ? "PASS " : "FAIL ") + c.name + ": " + c.detail);
    }
    rep.pass = rep.pass && pass;
    json sj{{"system", name},
            {"config_hash", cfg.hash()},
            {"reference", {{"m", ref.m}, {"n", ref.n}, {"R_h", ref.r_h}, {"R_f", ref.r_f}}},
            {"report", report_metrics(out.report)},
            {"checks", checks},
            {"pass", pass}};
    if (out.ablation) {
      sj["ablation"] = {{"dims", out.ablation->dims},
                        {"mean_loss", out.ablation->mean_loss},
                        {"std_loss", out.ablation->std_loss},
                        {"chosen_dim", out.ablation->chosen_dim}};
    }
    if (out.second_order) sj["second_order"] = report_metrics(*out.second_order);
    sys_json.push_back(sj);
    table.push_back(out.report);
    if (out.second_order) table.push_back(*out.second_order);
    rep.systems.push_back(std::move(out));
  }

  json payload{{"scale", to_string(options.scale)},
               {"seed", options.seed},
               {"epochs_override", options.epochs_override ? json(*options.epochs_override) : json()},
               {"samples_override",
                options.samples_override ? json(*options.samples_override) : json()},
               {"systems", sys_json},
               {"pass", rep.pass}};
  rep.metrics_json = payload.dump(2) + "\n";
  write_file_atomic(out_dir / "metrics.json", rep.metrics_json);
  write_file_atomic(out_dir / "relative_errors.csv", relative_error_csv(table));
  return rep;
}

}  // namespace phydisc
