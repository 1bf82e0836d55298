#pragma once

// Explicit Tsitouras 5(4) Runge-Kutta integration with PI step-size control,
// plus the continuous adjoint sensitivity pass used for training.

#include <cstddef>
#include <vector>

#include "phydisc/nn.hpp"

namespace phydisc {

/// Right-hand side dh/dt = f(t, h; params) together with its vector-Jacobian
/// product. Any control signal is owned by the implementation and evaluated
/// at the requested time.
class OdeField {
 public:
  virtual ~OdeField() = default;

  virtual std::size_t state_size() const = 0;
  virtual std::size_t param_size() const { return 0; }

  virtual void rhs(double t, const Vec& h, Vec& dh) const = 0;

  /// grad_h = a^T df/dh. a^T df/dparams is added into grad_params_accum.
  virtual void vjp(double t, const Vec& h, const Vec& a, Vec& grad_h,
                   Eigen::Ref<Vec> grad_params_accum) const;
};

enum class SolverMethod { kTsit5 };

struct SolverConfig {
  SolverMethod method = SolverMethod::kTsit5;
  double rel_tol = 1e-6;
  double abs_tol = 1e-6;
  std::size_t max_steps = 100000;
  /// Output times t_0 < t_1 < ... ; the integration starts at grid.front().
  std::vector<double> dense_grid;

  /// Throws ConfigError on non-positive tolerances or a non-increasing grid.
  void validate() const;
};

/// Forward solution at the grid times. `interval_steps[i]` and
/// `interval_q_old[i]` are the step-size controller state on entry to
/// [t_i, t_{i+1}], kept so the backward pass can replay the identical step
/// sequence from the checkpoint states[i].
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<double> interval_steps;
  std::vector<double> interval_q_old;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_evaluations = 0;
};

/// Integrates from h0 at grid.front() and returns states at every grid time.
/// Throws DivergenceError when max_steps is exhausted and InstabilityError
/// on a non-finite state.
Trajectory integrate(const OdeField& field, const Vec& h0,
                     const SolverConfig& cfg);

/// Classical fixed-step Tsit5 from t0 to t1 in `steps` equal steps.
Vec integrate_fixed(const OdeField& field, const Vec& h0, double t0, double t1,
                    std::size_t steps);

/// a(t) = dL/dh(t) during the backward pass.
struct AdjointState {
  Vec a;
  Vec grad_params_accum;
  double t = 0.0;
};

struct AdjointResult {
  Vec grad_h0;
  Vec grad_params;
};

/// Integrates da/dt = -a df/dh backward from the last grid time to the first,
/// adding cotangents[i] = dL/dh(t_i) as each grid time is crossed, and
/// accumulates dL/dparams = integral of a df/dparams along the way. States
/// between grid times are recovered by re-integrating each interval from its
/// checkpoint and evaluating the Tsit5 dense output.
AdjointResult adjoint_backward(const OdeField& field,
                               const Trajectory& forward_states,
                               const std::vector<Vec>& cotangents,
                               const SolverConfig& cfg);

/// Uniform grid of `count` points covering [start, stop] inclusive.
std::vector<double> uniform_grid(double start, double stop, std::size_t count);

}  // namespace phydisc
