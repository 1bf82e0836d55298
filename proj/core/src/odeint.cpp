#include "phydisc/odeint.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <sstream>

#include "phydisc/errors.hpp"

namespace phydisc {

namespace {

// Tsitouras (2011) 5(4) pair with the free 4th-order dense output.
namespace tab {
constexpr double c2 = 0.161, c3 = 0.327, c4 = 0.9, c5 = 0.9800255409045097;
constexpr double a21 = 0.161;
constexpr double a31 = -0.008480655492356989, a32 = 0.335480655492357;
constexpr double a41 = 2.8971530571054935, a42 = -6.359448489975075,
                 a43 = 4.3622954328695815;
constexpr double a51 = 5.325864828439257, a52 = -11.748883564062828,
                 a53 = 7.4955393428898365, a54 = -0.09249506636175525;
constexpr double a61 = 5.86145544294642, a62 = -12.92096931784711,
                 a63 = 8.159367898576159, a64 = -0.071584973281401,
                 a65 = -0.028269050394068383;
constexpr double a71 = 0.09646076681806523, a72 = 0.01,
                 a73 = 0.4798896504144996, a74 = 1.379008574103742,
                 a75 = -3.290069515436081, a76 = 2.324710524099774;
// b - b_hat for the embedded error estimate.
constexpr double e1 = -0.00178001105222577714, e2 = -0.0008164344596567469,
                 e3 = 0.007880878010261995, e4 = -0.1447110071732629,
                 e5 = 0.5823571654525552, e6 = -0.45808210592918697,
                 e7 = 0.015151515151515152;
}  // namespace tab

using Rhs = std::function<void(double, const Vec&, Vec&)>;

struct Stages {
  std::array<Vec, 7> k;
};

struct StepRecord {
  double t = 0.0;
  double dt = 0.0;
  Vec y;
  Stages stages;
};

// Interpolation weights b_i(theta) of the dense output.
std::array<double, 7> dense_weights(double th) {
  const double t2 = th * th;
  return {
      th * (1.0 + th * (-2.763706197274826 +
                        th * (2.9132554618219126 - 1.0530884977290216 * th))),
      t2 * (0.1317 + th * (-0.2234 + 0.1017 * th)),
      t2 * (3.930296236894751 +
            th * (-5.941033872131505 + 2.490627285651252793 * th)),
      t2 * (-12.411077166933676 +
            th * (30.33818863028232 - 16.54810288924490272 * th)),
      t2 * (37.50931341651104 +
            th * (-88.1789048947664 + 47.37952196281928122 * th)),
      t2 * (-27.89652628919729 +
            th * (65.09189467479368 - 34.87065786149660974 * th)),
      t2 * (1.5 + th * (-4.0 + 2.5 * th)),
  };
}

// One Tsit5 step. k[0] must already hold f(t, y). Fills k[1..6] and returns
// the 5th-order solution in y_new and the error estimate in err.
void tsit5_step(const Rhs& f, double t, const Vec& y, double dt, Stages& s,
                Vec& y_new, Vec& err) {
  using namespace tab;
  auto& k = s.k;
  Vec tmp = y + dt * a21 * k[0];
  f(t + c2 * dt, tmp, k[1]);
  tmp = y + dt * (a31 * k[0] + a32 * k[1]);
  f(t + c3 * dt, tmp, k[2]);
  tmp = y + dt * (a41 * k[0] + a42 * k[1] + a43 * k[2]);
  f(t + c4 * dt, tmp, k[3]);
  tmp = y + dt * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3]);
  f(t + c5 * dt, tmp, k[4]);
  tmp = y + dt * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] +
                  a65 * k[4]);
  f(t + dt, tmp, k[5]);
  y_new = y + dt * (a71 * k[0] + a72 * k[1] + a73 * k[2] + a74 * k[3] +
                    a75 * k[4] + a76 * k[5]);
  f(t + dt, y_new, k[6]);
  err = dt * (e1 * k[0] + e2 * k[1] + e3 * k[2] + e4 * k[3] + e5 * k[4] +
              e6 * k[5] + e7 * k[6]);
}

double error_norm(const Vec& err, const Vec& y, const Vec& y_new,
                  double abs_tol, double rel_tol) {
  if (err.size() == 0) return 0.0;
  const auto scale =
      abs_tol + rel_tol * y.array().abs().max(y_new.array().abs());
  return std::sqrt((err.array() / scale).square().mean());
}

double rms_scaled(const Vec& v, const Vec& y, double abs_tol, double rel_tol) {
  if (v.size() == 0) return 0.0;
  const auto scale = abs_tol + rel_tol * y.array().abs();
  return std::sqrt((v.array() / scale).square().mean());
}

// Hairer-Wanner starting step heuristic, signed by `direction`.
double initial_step(const Rhs& f, double t0, const Vec& y0, const Vec& f0,
                    double direction, double span, double abs_tol,
                    double rel_tol) {
  const double d0 = rms_scaled(y0, y0, abs_tol, rel_tol);
  const double d1 = rms_scaled(f0, y0, abs_tol, rel_tol);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  Vec y1 = y0 + direction * h0 * f0;
  Vec f1(y0.size());
  f(t0 + direction * h0, y1, f1);
  const double d2 = rms_scaled(f1 - f0, y0, abs_tol, rel_tol) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                  : std::pow(0.01 / dmax, 1.0 / 5.0);
  return direction * std::min({100.0 * h0, h1, span});
}

bool all_finite(const Vec& v) { return v.allFinite(); }

// PI controller constants for a 5th-order method.
constexpr double kBeta1 = 7.0 / 50.0;
constexpr double kBeta2 = 2.0 / 25.0;
constexpr double kSafety = 0.9;
constexpr double kQMin = 0.2;
constexpr double kQMax = 10.0;
constexpr double kQOldFloor = 1e-4;

struct ControllerState {
  double dt = 0.0;
  double q_old = kQOldFloor;
};

struct Counters {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evals = 0;
  std::size_t budget = 0;
};

// Adaptive integration of y from t0 to t1 (either direction). Steps are
// clamped to land exactly on t1. Accepted steps are appended to `record`
// when given. On return `ctl` holds the step proposal for the next interval.
void integrate_interval(const Rhs& f, double t0, double t1, Vec& y,
                        ControllerState& ctl, const SolverConfig& cfg,
                        Counters& counters, std::vector<StepRecord>* record) {
  const double direction = t1 >= t0 ? 1.0 : -1.0;
  double t = t0;
  Stages s;
  for (auto& k : s.k) k.resize(y.size());
  f(t, y, s.k[0]);
  ++counters.evals;
  Vec y_new(y.size());
  Vec err(y.size());
  const double span = std::abs(t1 - t0);
  if (span == 0.0) return;
  double dt = ctl.dt;
  const double tiny = 1e-12 * std::max(1.0, std::abs(t1));
  while (direction * (t1 - t) > 0.0) {
    if (counters.accepted + counters.rejected >= cfg.max_steps) {
      std::ostringstream msg;
      msg << "ODE step budget of " << cfg.max_steps << " exhausted at t = "
          << t;
      throw DivergenceError(msg.str(), t);
    }
    bool last = false;
    if (direction * (t + dt - t1) >= -tiny) {
      dt = t1 - t;
      last = true;
    }
    if (std::abs(dt) < 1e-14 * std::max(1.0, std::abs(t))) {
      std::ostringstream msg;
      msg << "ODE step size underflow at t = " << t;
      throw DivergenceError(msg.str(), t);
    }
    tsit5_step(f, t, y, dt, s, y_new, err);
    counters.evals += 6;
    const double e = error_norm(err, y, y_new, cfg.abs_tol, cfg.rel_tol);
    if (!std::isfinite(e) || !all_finite(y_new)) {
      // Treat as a rejected step; shrink hard.
      ++counters.rejected;
      dt *= kQMin;
      if (!all_finite(s.k[0]) || !all_finite(y)) {
        throw InstabilityError("non-finite ODE state", t);
      }
      continue;
    }
    const double q11 = std::pow(std::max(e, 1e-300), kBeta1);
    if (e <= 1.0) {
      double q = q11 / std::pow(ctl.q_old, kBeta2);
      q = std::clamp(q / kSafety, 1.0 / kQMax, 1.0 / kQMin);
      if (record != nullptr) {
        record->push_back(StepRecord{t, dt, y, s});
      }
      t = last ? t1 : t + dt;
      y = y_new;
      s.k[0] = s.k[6];
      ctl.q_old = std::max(e, kQOldFloor);
      ++counters.accepted;
      dt = dt / q;
      ctl.dt = dt;
      if (last) return;
    } else {
      ++counters.rejected;
      dt = dt / std::min(1.0 / kQMin, q11 / kSafety);
      ctl.dt = dt;
    }
  }
}

Rhs wrap_field(const OdeField& field) {
  return [&field](double t, const Vec& h, Vec& dh) { field.rhs(t, h, dh); };
}

}  // namespace

void OdeField::vjp(double, const Vec&, const Vec&, Vec&, Eigen::Ref<Vec>) const {
  throw Error("OdeField::vjp not implemented for this field");
}

void SolverConfig::validate() const {
  if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
    throw ConfigError("solver tolerances must be positive");
  }
  if (dense_grid.empty()) throw ConfigError("solver grid is empty");
  for (std::size_t i = 1; i < dense_grid.size(); ++i) {
    if (!(dense_grid[i] > dense_grid[i - 1])) {
      throw ConfigError("solver grid must be strictly increasing");
    }
  }
  if (max_steps == 0) throw ConfigError("max_steps must be >= 1");
}

std::vector<double> uniform_grid(double start, double stop, std::size_t count) {
  std::vector<double> g(count);
  if (count == 1) {
    g[0] = start;
    return g;
  }
  const double step = (stop - start) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = start + step * static_cast<double>(i);
  }
  g.back() = stop;
  return g;
}

Trajectory integrate(const OdeField& field, const Vec& h0,
                     const SolverConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(h0.size()) != field.state_size()) {
    throw ShapeError("integrate: h0 length does not match the field state");
  }
  if (!all_finite(h0)) {
    throw InstabilityError("integrate: non-finite initial state",
                           cfg.dense_grid.front());
  }
  const Rhs f = wrap_field(field);
  const auto& grid = cfg.dense_grid;
  Trajectory out;
  out.times = grid;
  out.states.reserve(grid.size());
  out.states.push_back(h0);
  if (grid.size() == 1) return out;

  Counters counters;
  ControllerState ctl;
  Vec y = h0;
  {
    Vec f0(y.size());
    f(grid[0], y, f0);
    ++counters.evals;
    ctl.dt = initial_step(f, grid[0], y, f0, 1.0, grid.back() - grid.front(),
                          cfg.abs_tol, cfg.rel_tol);
    ++counters.evals;
  }
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    out.interval_steps.push_back(ctl.dt);
    out.interval_q_old.push_back(ctl.q_old);
    integrate_interval(f, grid[i], grid[i + 1], y, ctl, cfg, counters, nullptr);
    out.states.push_back(y);
  }
  out.accepted_steps = counters.accepted;
  out.rejected_steps = counters.rejected;
  out.rhs_evaluations = counters.evals;
  return out;
}

Vec integrate_fixed(const OdeField& field, const Vec& h0, double t0, double t1,
                    std::size_t steps) {
  const Rhs f = wrap_field(field);
  const double dt = (t1 - t0) / static_cast<double>(steps);
  Stages s;
  for (auto& k : s.k) k.resize(h0.size());
  Vec y = h0;
  Vec y_new(h0.size());
  Vec err(h0.size());
  for (std::size_t n = 0; n < steps; ++n) {
    const double t = t0 + dt * static_cast<double>(n);
    f(t, y, s.k[0]);
    tsit5_step(f, t, y, dt, s, y_new, err);
    y = y_new;
  }
  return y;
}

AdjointResult adjoint_backward(const OdeField& field,
                               const Trajectory& forward_states,
                               const std::vector<Vec>& cotangents,
                               const SolverConfig& cfg) {
  cfg.validate();
  const auto& times = forward_states.times;
  const std::size_t n_times = times.size();
  if (forward_states.states.size() != n_times || cotangents.size() != n_times) {
    throw ShapeError("adjoint_backward: cotangents must align with the grid");
  }
  if (n_times > 1 && (forward_states.interval_steps.size() != n_times - 1 ||
                      forward_states.interval_q_old.size() != n_times - 1)) {
    throw ShapeError("adjoint_backward: trajectory lacks checkpoint metadata");
  }
  const auto n = static_cast<Eigen::Index>(field.state_size());
  const auto p = static_cast<Eigen::Index>(field.param_size());
  for (const Vec& c : cotangents) {
    if (c.size() != n) {
      throw ShapeError("adjoint_backward: cotangent length mismatch");
    }
  }

  AdjointResult result;
  result.grad_params = Vec::Zero(p);
  Vec a = cotangents.back();
  if (n_times == 1) {
    result.grad_h0 = a;
    return result;
  }

  const Rhs f = wrap_field(field);
  std::vector<StepRecord> record;
  Vec z(n + p);
  Vec grad_h(n);
  Counters back_counters;
  ControllerState back_ctl;
  bool have_back_step = false;

  for (std::size_t i = n_times - 1; i-- > 0;) {
    const double t_lo = times[i];
    const double t_hi = times[i + 1];

    // Skip the quadrature entirely when nothing flows backward yet.
    if (a.isZero(0.0)) {
      a += cotangents[i];
      continue;
    }

    // Replay the forward interval from its checkpoint.
    record.clear();
    Vec y = forward_states.states[i];
    ControllerState fwd_ctl{forward_states.interval_steps[i],
                            forward_states.interval_q_old[i]};
    Counters fwd_counters;
    integrate_interval(f, t_lo, t_hi, y, fwd_ctl, cfg, fwd_counters, &record);

    auto dense_state = [&record](double t, Vec& h) {
      auto it = std::upper_bound(
          record.begin(), record.end(), t,
          [](double value, const StepRecord& r) { return value < r.t; });
      const StepRecord& r = it == record.begin() ? record.front() : *(it - 1);
      const double theta = std::clamp((t - r.t) / r.dt, 0.0, 1.0);
      const auto w = dense_weights(theta);
      h = r.y;
      for (std::size_t s = 0; s < 7; ++s) h += (r.dt * w[s]) * r.stages.k[s];
    };

    Vec h(n);
    const Rhs adj = [&](double t, const Vec& zz, Vec& dz) {
      dense_state(t, h);
      const Vec a_t = zz.head(n);
      dz.resize(zz.size());
      dz.tail(p).setZero();
      field.vjp(t, h, a_t, grad_h, dz.tail(p));
      dz.head(n) = -grad_h;
      dz.tail(p) = -dz.tail(p);
    };

    z.head(n) = a;
    z.tail(p).setZero();
    if (!have_back_step) {
      Vec dz0(n + p);
      adj(t_hi, z, dz0);
      back_ctl.dt = initial_step(adj, t_hi, z, dz0, -1.0, t_hi - t_lo,
                                 cfg.abs_tol, cfg.rel_tol);
      have_back_step = true;
    }
    integrate_interval(adj, t_hi, t_lo, z, back_ctl, cfg, back_counters,
                       nullptr);
    if (!all_finite(z)) {
      throw InstabilityError("non-finite adjoint state", t_lo);
    }
    a = z.head(n) + cotangents[i];
    result.grad_params += z.tail(p);
  }
  result.grad_h0 = a;
  return result;
}

}  // namespace phydisc
