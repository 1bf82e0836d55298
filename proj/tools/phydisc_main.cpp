#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "phydisc/errors.hpp"
#include "phydisc/experiment.hpp"
#include "phydisc/parallel.hpp"

using namespace phydisc;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kNumericError = 2;
constexpr int kAcceptanceFailure = 3;

struct ConfigFlags {
  std::string config;
  std::string system;
  std::string mode = "first-order";
  std::string scale = "full";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> latent_dim;

  void add_to(CLI::App* app, bool with_mode) {
    app->add_option("--config", config, "experiment config file (JSON)");
    app->add_option("--system", system, "copernicus, newton, schrodinger or pauli");
    if (with_mode) app->add_option("--mode", mode, "first-order or second-order");
    app->add_option("--scale", scale, "full or desk presets")->check(CLI::IsMember({"full", "desk"}));
    app->add_option("--seed", seed, "master seed");
    app->add_option("--samples", samples, "sample count override");
    app->add_option("--epochs", epochs, "epoch count override");
    app->add_option("--latent-dim", latent_dim, "latent size override");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config.empty()) {
      c = load_config(config);
      if (!system.empty() && system_from_string(system) != c.system) {
        throw ConfigError("--system differs from the config file");
      }
      if (mode != "first-order" && latent_mode_from_string(mode) != c.mode) {
        throw ConfigError("--mode differs from the config file");
      }
    } else {
      if (system.empty()) throw ConfigError("either --config or --system is required");
      c = ExperimentConfig::defaults(system_from_string(system), latent_mode_from_string(mode),
                                     scale_from_string(scale));
    }
    if (seed) c.set_seed(*seed);
    if (samples) c.set_samples(*samples);
    if (epochs) c.set_epochs(*epochs);
    if (latent_dim) c.set_latent_dim(*latent_dim);
    c.validate();
    return c;
  }
};

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

std::string join_dims(const std::vector<std::size_t>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

int run_generate(const ConfigFlags& flags, const std::string& out) {
  const ExperimentConfig cfg = flags.resolve();
  const GenerateOutcome g = cmd_generate(cfg, out);
  std::cout << "wrote " << g.data.samples.size() << " " << to_string(cfg.system)
            << " samples to " << g.path.string() << " (config " << cfg.hash() << ", seed "
            << cfg.seed << ", " << g.data.proposals << " proposals)\n";
  return kOk;
}

int run_train(const ConfigFlags& flags, const std::string& data_path, const std::string& out,
              bool resume) {
  const ExperimentConfig cfg = flags.resolve();
  const Dataset data = load_dataset(data_path);
  const TrainOutcome t = cmd_train(cfg, data, out, resume, log_line);
  std::cout << "checkpoint " << t.checkpoint.string() << " after "
            << cfg.train.epochs() << " epochs, quasi-Newton stop: " << t.fit.bfgs_stop_reason
            << "\n";
  return kOk;
}

int run_ablate(const ConfigFlags& flags, const std::string& data_path, const std::string& out,
               const std::vector<std::size_t>& dims, std::optional<std::size_t> restarts) {
  ExperimentConfig cfg = flags.resolve();
  if (!dims.empty()) cfg.ablation_dims = dims;
  if (restarts) cfg.restarts = *restarts;
  cfg.validate();
  const Dataset data = load_dataset(data_path);
  const AblationCurve c = cmd_ablate(cfg, data, out, log_line);
  for (std::size_t i = 0; i < c.dims.size(); ++i) {
    std::cout << "dim " << c.dims[i] << "  mean " << format_double(c.mean_loss[i]) << "  std "
              << format_double(c.std_loss[i]) << "\n";
  }
  std::cout << "chosen latent dim " << c.chosen_dim << "\n";
  return kOk;
}

int run_analyze(const std::string& ckpt_path, const std::string& data_path,
                const std::string& out, std::vector<std::size_t> indices, std::size_t m,
                std::size_t n) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_path);
  if (indices.empty()) {
    for (std::size_t i : ExperimentConfig::defaults(data.spec.system).analysis.indices) {
      if (i < data.grid_size()) indices.push_back(i);
    }
  }
  const FitReport r = cmd_analyze(ckpt, data, {indices, m, n}, out);
  std::cout << "R_h(" << r.errors.m << "," << r.errors.n << ") = " << format_double(r.errors.r_h)
            << "\nR_f(" << r.errors.m << "," << r.errors.n << ") = "
            << format_double(r.errors.r_f) << "\n";
  for (const auto& f : r.fits) {
    std::cout << "index " << f.grid_index << " latent R^2 min "
              << format_double(f.latent_fit.r_squared.minCoeff()) << "\n";
  }
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
  return kOk;
}

int run_reproduce(const std::string& table, const std::string& scale,
                  const std::vector<std::string>& systems, std::uint64_t seed,
                  const std::string& out, std::optional<std::size_t> epochs,
                  std::optional<std::size_t> samples) {
  if (table != "table1") throw ConfigError("unknown target '" + table + "' (expected table1)");
  ReproduceOptions opt;
  opt.scale = scale_from_string(scale);
  opt.seed = seed;
  opt.epochs_override = epochs;
  opt.samples_override = samples;
  for (const auto& s : systems) opt.systems.push_back(system_from_string(s));
  std::cout << "reproduce table1, " << scale << " scale, seed " << seed << ", "
            << worker_count() << " workers\n";
  if (opt.scale == Scale::kFull) {
    std::cout << "full scale trains every system on the complete sample counts and epoch "
                 "schedules; expect a runtime of many hours (roughly 10x desk scale per "
                 "system, times the ablation restarts)\n";
  } else {
    std::cout << "desk scale: samples / 10, epochs / 4, 2 restarts; numbers are not "
                 "full-scale results\n";
  }
  const ReproduceReport rep = cmd_reproduce(opt, out, log_line);
  std::cout << "\nsystem        m    n  R_h         R_f         ref R_h  ref R_f\n";
  for (const auto& s : rep.systems) {
    const TableRow ref = reference_row(s.system);
    std::printf("%-12s %4zu %3zu  %-10s  %-10s  %-7s  %-7s\n", to_string(s.system).c_str(),
                s.report.errors.m, s.report.errors.n, format_double(s.report.errors.r_h).c_str(),
                format_double(s.report.errors.r_f).c_str(), format_double(ref.r_h).c_str(),
                format_double(ref.r_f).c_str());
    std::fflush(stdout);
  }
  std::cout << "\n";
  for (const auto& s : rep.systems) {
    for (const auto& c : s.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << to_string(s.system) << " " << c.name << ": "
                << c.detail << "\n";
    }
  }
  std::cout << (rep.pass ? "all checks passed" : "acceptance checks failed") << "\n";
  return rep.pass ? kOk : kAcceptanceFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn latent physical concepts from simulated observations"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, ablate_flags;
  std::string gen_out, data_path, out_dir = "out", ckpt_path;
  bool resume = false;
  std::vector<std::size_t> dims, indices;
  std::optional<std::size_t> restarts;
  std::size_t m = 0, n = 0;

  auto* gen = app.add_subcommand("generate", "simulate a dataset");
  gen_flags.add_to(gen, false);
  gen->add_option("--out", gen_out, "output path (.bin file or text directory)")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train_flags.add_to(train, true);
  train->add_option("--data", data_path, "dataset path")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.json");

  auto* ablate = app.add_subcommand("ablate", "latent-dimension ablation");
  ablate_flags.add_to(ablate, true);
  ablate->add_option("--data", data_path, "dataset path")->required();
  ablate->add_option("--out", out_dir, "output directory");
  ablate->add_option("--dims", dims, "latent sizes to try")->delimiter(',');
  ablate->add_option("--restarts", restarts, "restarts per size");

  auto* analyze = app.add_subcommand("analyze", "fit latents and field outputs to concepts");
  analyze->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  analyze->add_option("--data", data_path, "dataset path")->required();
  analyze->add_option("--out", out_dir, "output directory");
  analyze->add_option("--indices", indices, "grid indices for the concept fits")->delimiter(',');
  analyze->add_option("--m", m, "grid points in R_h / R_f (0: all)");
  analyze->add_option("--n", n, "latents in R_h / R_f (0: all)");

  std::string table = "table1", scale = "desk";
  std::vector<std::string> systems;
  std::uint64_t seed = 1;
  std::optional<std::size_t> rep_epochs, rep_samples;
  auto* reproduce = app.add_subcommand("reproduce", "run and check the relative-error table");
  reproduce->add_option("target", table, "table1");
  reproduce->add_option("--scale", scale, "desk or full")->check(CLI::IsMember({"full", "desk"}));
  reproduce->add_option("--systems", systems, "subset of systems")->delimiter(',');
  reproduce->add_option("--seed", seed, "master seed");
  reproduce->add_option("--out", out_dir, "output directory");
  reproduce->add_option("--epochs", rep_epochs, "epoch override for quick runs");
  reproduce->add_option("--samples", rep_samples, "sample override for quick runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (*gen) return run_generate(gen_flags, gen_out);
    if (*train) return run_train(train_flags, data_path, out_dir, resume);
    if (*ablate) return run_ablate(ablate_flags, data_path, out_dir, dims, restarts);
    if (*analyze) return run_analyze(ckpt_path, data_path, out_dir, indices, m, n);
    if (*reproduce) {
      return run_reproduce(table, scale, systems, seed, out_dir, rep_epochs, rep_samples);
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const InstabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const TrainingAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const SamplingExhaustedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const DegenerateFitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const DegenerateGeometryError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  }
  return kUserError;
}
