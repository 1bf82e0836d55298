#include "phydisc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "phydisc/errors.hpp"
#include "phydisc/optimizers.hpp"

namespace phydisc {

namespace {

constexpr double kMreDelta = 1e-8;
constexpr std::uint64_t kStreamShuffle = 21;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

void check_same_shape(const std::vector<Mat>& x, const std::vector<Mat>& xhat,
                      const char* what) {
  if (x.size() != xhat.size() || x.empty()) {
    throw ShapeError(std::string(what) + ": grid lengths differ or are empty");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != xhat[i].rows() || x[i].cols() != xhat[i].cols()) {
      throw ShapeError(std::string(what) + ": shape mismatch at grid index " +
                       std::to_string(i));
    }
  }
}

double element_count(const std::vector<Mat>& x) {
  return static_cast<double>(x.size()) * static_cast<double>(x.front().size());
}

std::size_t stochastic_epochs(const TrainConfig& cfg) {
  std::size_t n = 0;
  for (const auto& p : cfg.schedule) {
    if (p.optimizer != OptimizerKind::kBfgs) n += p.epochs;
  }
  return n;
}

}  // namespace

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kRmsProp:
      return "rmsprop";
    case OptimizerKind::kAdam:
      return "adam";
    case OptimizerKind::kBfgs:
      return "bfgs";
  }
  return "unknown";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  for (auto k : {OptimizerKind::kRmsProp, OptimizerKind::kAdam, OptimizerKind::kBfgs}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::vector<PhaseSpec> default_schedule(std::size_t epochs) {
  const auto rms = static_cast<std::size_t>(std::llround(0.45 * static_cast<double>(epochs)));
  const auto adam = static_cast<std::size_t>(std::llround(0.45 * static_cast<double>(epochs)));
  const std::size_t first = std::min(rms, epochs);
  const std::size_t second = std::min(adam, epochs - first);
  return {{OptimizerKind::kRmsProp, first},
          {OptimizerKind::kAdam, second},
          {OptimizerKind::kBfgs, epochs - first - second}};
}

TrainConfig TrainConfig::defaults(SystemKind system, LatentMode mode) {
  TrainConfig c;
  std::size_t epochs = 0;
  switch (system) {
    case SystemKind::kCopernicus:
      c.lr_start = 0.01;
      c.lr_end = 0.0001;
      c.beta = 0.01;
      epochs = 3000;
      break;
    case SystemKind::kNewton:
      c.beta = 0.0;
      c.mre_weight = 1.0;
      epochs = 2200;
      break;
    case SystemKind::kSchrodinger:
      c.beta = 0.001;
      epochs = 1600;
      break;
    case SystemKind::kPauli:
      if (mode == LatentMode::kSecondOrder) {
        c.beta = 0.1;
        epochs = 1400;
      } else {
        c.beta = 0.0001;
        epochs = 2000;
      }
      break;
  }
  c.set_epochs(epochs);
  return c;
}

std::size_t TrainConfig::epochs() const {
  std::size_t n = 0;
  for (const auto& p : schedule) n += p.epochs;
  return n;
}

SolverConfig TrainConfig::solver(const std::vector<double>& grid) const {
  SolverConfig s;
  s.rel_tol = rel_tol;
  s.abs_tol = abs_tol;
  s.max_steps = max_steps;
  s.dense_grid = grid;
  return s;
}

void TrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 0");
  if (!(sigma_h > 0.0)) throw ConfigError("sigma_h must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr_start > 0.0 && lr_end > 0.0 && lr_end <= lr_start)) {
    throw ConfigError("learning rates must satisfy 0 < lr_end <= lr_start");
  }
  if (!(mre_weight >= 0.0)) throw ConfigError("mre_weight must be >= 0");
  if (!(rel_tol > 0.0 && abs_tol > 0.0)) throw ConfigError("solver tolerances must be > 0");
  if (max_steps == 0) throw ConfigError("max_steps must be >= 1");
  bool seen_bfgs = false;
  for (const auto& p : schedule) {
    if (seen_bfgs && p.optimizer != OptimizerKind::kBfgs && p.epochs > 0) {
      throw ConfigError("stochastic phases must precede the BFGS phase");
    }
    if (p.optimizer == OptimizerKind::kBfgs && p.epochs > 0) seen_bfgs = true;
  }
}

double reconstruction_loss(const std::vector<Mat>& x, const std::vector<Mat>& xhat) {
  check_same_shape(x, xhat, "reconstruction_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - xhat[i]).squaredNorm();
  return s / element_count(x);
}

double kl_divergence(const Mat& mu, const Mat& sigma, double sigma_h) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols() || mu.cols() == 0) {
    throw ShapeError("kl_divergence: mu and sigma shapes differ");
  }
  if (!(sigma.array() > 0.0).all()) throw ShapeError("kl_divergence: sigma must be > 0");
  if (!(sigma_h > 0.0)) throw ConfigError("kl_divergence: sigma_h must be > 0");
  const double inv = 1.0 / (sigma_h * sigma_h);
  const double s = (mu.array().square() * inv + sigma.array().square() * inv -
                    (sigma.array().square()).log())
                       .sum();
  return 0.5 * s / static_cast<double>(mu.cols());
}

double mre_regularizer(const std::vector<Mat>& x, const std::vector<Mat>& xhat) {
  check_same_shape(x, xhat, "mre_regularizer");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += ((x[i] - xhat[i]).array().abs() / (x[i].array().abs() + kMreDelta)).sum();
  }
  return s / element_count(x);
}

LossGradient loss_and_gradient(const ModelParams& params, const Batch& batch,
                               const TrainConfig& cfg,
                               const std::vector<double>& grid,
                               bool with_gradient) {
  const SolverConfig solver = cfg.solver(grid);
  const BatchControl control(params.spec.system, batch.controls);
  const BatchRollout r = rollout_batch(params, batch, control, solver);

  LossGradient out;
  LossBreakdown& l = out.loss;
  l.reconstruction = reconstruction_loss(batch.targets, r.reconstructions);
  l.kl = kl_divergence(r.encoding.mu, r.encoding.sigma, cfg.sigma_h);
  l.mre = cfg.mre_weight > 0.0 ? mre_regularizer(batch.targets, r.reconstructions) : 0.0;
  l.total = l.reconstruction + cfg.beta * l.kl + cfg.mre_weight * l.mre;
  if (!with_gradient) return out;

  const auto lat = idx(params.spec.latent_dim);
  const auto k = batch.encoder_inputs.cols();
  const std::size_t n_grid = r.reconstructions.size();
  const double count = element_count(batch.targets);

  // Decoder: cotangent on every reconstruction, index-major like the tape.
  Mat cot_dec(idx(params.spec.obs_dim), k * idx(n_grid));
  for (std::size_t i = 0; i < n_grid; ++i) {
    const Mat diff = r.reconstructions[i] - batch.targets[i];
    auto block = cot_dec.middleCols(idx(i) * k, k);
    block = (2.0 / count) * diff;
    if (cfg.mre_weight > 0.0) {
      block.array() += (cfg.mre_weight / count) * diff.array().sign() /
                       (batch.targets[i].array().abs() + kMreDelta);
    }
  }
  const auto ne = idx(params.encoder.size());
  const auto nf = idx(params.field.size());
  const auto nd = idx(params.decoder.size());
  out.grad = Vec::Zero(ne + nf + nd);
  Mat grad_latent;
  vjp_batch(params.decoder, r.decoder_tape, cot_dec, &grad_latent,
            out.grad.segment(ne + nf, nd));

  std::vector<Vec> cotangents(n_grid);
  for (std::size_t i = 0; i < n_grid; ++i) {
    const Mat block = grad_latent.middleCols(idx(i) * k, k);
    cotangents[i] = Eigen::Map<const Vec>(block.data(), block.size());
  }
  const LatentField field(params, control);
  const AdjointResult adj = adjoint_backward(field, r.trajectory, cotangents, solver);
  out.grad.segment(ne, nf) = adj.grad_params;

  // Encoder: h0 = mu, plus the KL term on (mu, log sigma).
  Mat cot_enc(2 * lat, k);
  cot_enc.topRows(lat) = Eigen::Map<const Mat>(adj.grad_h0.data(), lat, k);
  cot_enc.bottomRows(lat).setZero();
  if (cfg.beta > 0.0) {
    const double inv = 1.0 / (cfg.sigma_h * cfg.sigma_h);
    const double scale = cfg.beta / static_cast<double>(k);
    cot_enc.topRows(lat) += (scale * inv) * r.encoding.mu;
    cot_enc.bottomRows(lat).array() +=
        scale * (r.encoding.sigma.array().square() * inv - 1.0);
  }
  vjp_batch(params.encoder, r.encoder_tape, cot_enc, nullptr, out.grad.segment(0, ne));
  out.grad_hash = hash_vector(out.grad);
  return out;
}

LossBreakdown evaluate_loss(const ModelParams& params, const Dataset& data,
                            const std::vector<std::size_t>& rows,
                            const TrainConfig& cfg) {
  LossBreakdown sum;
  if (rows.empty()) return sum;
  for (std::size_t start = 0; start < rows.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(rows.size(), start + cfg.batch_size);
    const std::vector<std::size_t> chunk(rows.begin() + static_cast<long>(start),
                                         rows.begin() + static_cast<long>(end));
    const auto lg = loss_and_gradient(params, make_batch(data, chunk), cfg,
                                      data.spec.grid, false);
    const double w = static_cast<double>(chunk.size());
    sum.reconstruction += w * lg.loss.reconstruction;
    sum.kl += w * lg.loss.kl;
    sum.mre += w * lg.loss.mre;
    sum.total += w * lg.loss.total;
  }
  const double n = static_cast<double>(rows.size());
  return {sum.reconstruction / n, sum.kl / n, sum.mre / n, sum.total / n};
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  const std::size_t n = stochastic_epochs(cfg);
  if (n <= 1) return cfg.lr_start;
  const double frac = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(n - 1));
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
}

FitResult fit(const ModelParams& init, const Dataset& data,
              const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  if (init.spec.system != data.spec.system) {
    throw ConfigError("model is for " + to_string(init.spec.system) +
                      " but the dataset holds " + to_string(data.spec.system));
  }
  if (data.samples.empty()) throw ConfigError("cannot train on an empty dataset");
  FitResult result{init, {}, {}};
  ModelParams& params = result.params;
  Vec x = params.flat();

  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::vector<std::size_t> all_rows = order;

  auto record = [&](EpochRecord rec) {
    if (!std::isfinite(rec.loss.total)) {
      throw TrainingAbort("non-finite loss at epoch " + std::to_string(rec.epoch),
                          rec.epoch);
    }
    if (options.on_epoch) options.on_epoch(rec);
    result.history.push_back(rec);
  };

  std::size_t epoch = 0;
  for (const PhaseSpec& phase : cfg.schedule) {
    const std::size_t phase_end = epoch + phase.epochs;
    if (phase_end <= options.start_epoch) {
      epoch = phase_end;
      continue;
    }
    epoch = std::max(epoch, options.start_epoch);
    if (epoch >= phase_end) continue;

    if (phase.optimizer == OptimizerKind::kBfgs) {
      const std::size_t first_epoch = epoch;
      // Evaluations of the current iteration, keyed by gradient hash so the
      // accepted point's loss can be logged.
      std::vector<std::pair<std::uint64_t, LossBreakdown>> evals;
      Objective objective = [&](const Vec& p, Vec& grad) {
        params.assign(p);
        try {
          const auto lg = loss_and_gradient(params, make_batch(data, all_rows), cfg,
                                            data.spec.grid);
          grad = lg.grad;
          evals.emplace_back(lg.grad_hash, lg.loss);
          return lg.loss.total;
        } catch (const DivergenceError&) {
        } catch (const InstabilityError&) {
        }
        grad = Vec::Zero(p.size());
        return std::numeric_limits<double>::infinity();
      };
      LbfgsOptions opts;
      opts.max_iterations = phase_end - epoch;
      const auto res = lbfgs_minimize(
          objective, x, opts, [&](std::size_t it, double f, const Vec& g) {
            EpochRecord rec;
            rec.epoch = first_epoch + it;
            rec.optimizer = OptimizerKind::kBfgs;
            rec.grad_hash_applied = hash_vector(g);
            rec.loss.total = f;
            for (const auto& [h, loss] : evals) {
              if (h == rec.grad_hash_applied) {
                rec.grad_hash_computed = h;
                rec.loss = loss;
              }
            }
            evals.clear();
            record(rec);
          });
      x = res.x;
      params.assign(x);
      result.bfgs_stop_reason = res.stop_reason;
      epoch = phase_end;
      continue;
    }

    RmsProp rms;
    Adam adam;
    for (; epoch < phase_end; ++epoch) {
      std::mt19937_64 rng(derive_seed(cfg.seed, kStreamShuffle, epoch));
      std::shuffle(order.begin(), order.end(), rng);
      const double lr = learning_rate(cfg, epoch);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.optimizer = phase.optimizer;
      rec.lr = lr;
      double seen = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const std::vector<std::size_t> rows(order.begin() + static_cast<long>(start),
                                            order.begin() + static_cast<long>(end));
        LossGradient lg;
        try {
          lg = loss_and_gradient(params, make_batch(data, rows), cfg, data.spec.grid);
        } catch (const TrainingAbort&) {
          throw;
        } catch (const Error& e) {
          throw TrainingAbort("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
        }
        if (!std::isfinite(lg.loss.total) || !lg.grad.allFinite()) {
          throw TrainingAbort("non-finite loss at epoch " + std::to_string(epoch), epoch);
        }
        if (phase.optimizer == OptimizerKind::kRmsProp) {
          rms.step(x, lg.grad, lr);
        } else {
          adam.step(x, lg.grad, lr);
        }
        rec.grad_hash_computed = lg.grad_hash;
        rec.grad_hash_applied = phase.optimizer == OptimizerKind::kRmsProp
                                    ? rms.last_grad_hash()
                                    : adam.last_grad_hash();
        params.assign(x);
        const double w = static_cast<double>(rows.size());
        seen += w;
        rec.loss.reconstruction += w * lg.loss.reconstruction;
        rec.loss.kl += w * lg.loss.kl;
        rec.loss.mre += w * lg.loss.mre;
      }
      rec.loss.reconstruction /= seen;
      rec.loss.kl /= seen;
      rec.loss.mre /= seen;
      rec.loss.total = rec.loss.reconstruction + cfg.beta * rec.loss.kl +
                       cfg.mre_weight * rec.loss.mre;
      record(rec);
    }
  }
  return result;
}

}  // namespace phydisc
