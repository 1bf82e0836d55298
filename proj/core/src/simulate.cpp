#include "phydisc/simulate.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "phydisc/errors.hpp"
#include "phydisc/parallel.hpp"

namespace phydisc {

const char* const kGeneratorVersion = "phydisc-sim-1";

namespace {

constexpr double kPi = std::numbers::pi;

// Stream tags for derive_seed.
constexpr std::uint64_t kStreamPhases = 1;
constexpr std::uint64_t kStreamSample = 2;

SolverConfig sim_solver(const SystemSpec& spec) {
  SolverConfig cfg;
  cfg.rel_tol = spec.solver_tol;
  cfg.abs_tol = spec.solver_tol;
  cfg.max_steps = 1'000'000;
  cfg.dense_grid = spec.grid;
  return cfg;
}

std::vector<double> audit_grid(const SystemSpec& spec) {
  std::vector<double> g =
      uniform_grid(spec.grid.front(), spec.grid.back(), spec.audit_points);
  g.insert(g.end(), spec.grid.begin(), spec.grid.end());
  return g;
}

void expect_system(const SystemSpec& spec, SystemKind kind) {
  spec.validate();
  if (spec.system != kind) {
    throw ConfigError("generator for " + to_string(kind) +
                      " called with a " + to_string(spec.system) + " spec");
  }
}

Dataset make_dataset(const SystemSpec& spec) {
  Dataset d;
  d.spec = spec;
  d.generator_version = kGeneratorVersion;
  d.samples.resize(spec.sample_count);
  return d;
}

// Draws potentials for every sample, in parallel, each from its own stream.
std::vector<PotentialDraw> draw_potentials(const SystemSpec& spec) {
  PotentialProposal proposal;
  proposal.scale = spec.proposal_scale;
  proposal.offset = spec.potential_offset;
  proposal.audit_grid = audit_grid(spec);
  proposal.max_draws = spec.max_draws_per_sample;
  std::vector<PotentialDraw> draws(spec.sample_count);
  parallel_for(spec.sample_count, [&](std::size_t k) {
    draws[k] = sample_potential(derive_seed(spec.seed, kStreamSample, k),
                                spec.band, proposal);
  });
  return draws;
}

Dataset gen_wave(const SystemSpec& spec, const std::vector<double>& shifts) {
  Dataset d = make_dataset(spec);
  const auto draws = draw_potentials(spec);
  const SolverConfig cfg = sim_solver(spec);
  const std::size_t channels = shifts.size();
  parallel_for(spec.sample_count, [&](std::size_t k) {
    WaveField field(draws[k].coeffs, shifts);
    const Vec h0 = Vec::Ones(static_cast<Eigen::Index>(2 * channels));
    const Trajectory traj = integrate(field, h0, cfg);
    Sample& s = d.samples[k];
    const auto n = static_cast<Eigen::Index>(spec.grid.size());
    s.truth.resize(n, static_cast<Eigen::Index>(2 * channels));
    s.observations.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      s.truth.row(i) = traj.states[static_cast<std::size_t>(i)].transpose();
      double rho = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double psi = traj.states[static_cast<std::size_t>(i)][static_cast<Eigen::Index>(2 * c)];
        rho += psi * psi;
      }
      s.observations(i, 0) = rho;
    }
    s.control = draws[k].coeffs;
  });
  for (const auto& dr : draws) d.proposals += dr.draws;
  return d;
}

}  // namespace

std::string to_string(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus:
      return "copernicus";
    case SystemKind::kNewton:
      return "newton";
    case SystemKind::kSchrodinger:
      return "schrodinger";
    case SystemKind::kPauli:
      return "pauli";
  }
  return "unknown";
}

SystemKind system_from_string(const std::string& name) {
  for (SystemKind s : all_systems()) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown system '" + name + "'");
}

const std::vector<SystemKind>& all_systems() {
  static const std::vector<SystemKind> systems{
      SystemKind::kCopernicus, SystemKind::kNewton, SystemKind::kSchrodinger,
      SystemKind::kPauli};
  return systems;
}

double PotentialCoeffs::value(double x) const {
  double v = offset;
  for (std::size_t k = 0; k < c.size(); ++k) {
    v += c[k] * std::sin(static_cast<double>(k + 1) * x);
  }
  return v;
}

bool potential_in_band(const PotentialCoeffs& v, const PotentialBand& band,
                       const std::vector<double>& grid) {
  for (double x : grid) {
    const double value = v.value(x);
    if (!(value > band.low && value < band.high)) return false;
  }
  return true;
}

PotentialDraw sample_potential(std::uint64_t seed, const PotentialBand& band,
                               const PotentialProposal& proposal) {
  if (!(band.low < band.high)) throw ConfigError("potential band is empty");
  if (proposal.audit_grid.empty()) {
    throw ConfigError("potential audit grid is empty");
  }
  // sin(k x) table over the audit grid, one row per point.
  constexpr std::size_t kTerms = std::tuple_size_v<decltype(PotentialCoeffs::c)>;
  const std::size_t n = proposal.audit_grid.size();
  std::vector<double> basis(n * kTerms);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kTerms; ++k) {
      basis[i * kTerms + k] =
          std::sin(static_cast<double>(k + 1) * proposal.audit_grid[i]);
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PotentialDraw out;
  out.coeffs.offset = proposal.offset;
  while (out.draws < proposal.max_draws) {
    for (double& ck : out.coeffs.c) ck = proposal.scale * normal(rng);
    ++out.draws;
    bool inside = true;
    for (std::size_t i = 0; i < n && inside; ++i) {
      double v = proposal.offset;
      for (std::size_t k = 0; k < kTerms; ++k) {
        v += out.coeffs.c[k] * basis[i * kTerms + k];
      }
      inside = v > band.low && v < band.high;
    }
    // Confirm with the direct evaluation so acceptance never rests on the
    // table alone.
    if (inside && potential_in_band(out.coeffs, band, proposal.audit_grid)) {
      return out;
    }
  }
  std::ostringstream msg;
  msg << "no potential inside (" << band.low << ", " << band.high << ") after "
      << out.draws << " proposals";
  throw SamplingExhaustedError(msg.str(), out.draws);
}

SystemSpec SystemSpec::defaults(SystemKind system) {
  SystemSpec s;
  s.system = system;
  switch (system) {
    case SystemKind::kCopernicus:
      s.grid = uniform_grid(0.0, 49.0, 50);
      s.sample_count = 1000;
      break;
    case SystemKind::kNewton:
      s.grid = uniform_grid(0.0, 10.0, 100);
      s.sample_count = 1000;
      break;
    case SystemKind::kSchrodinger:
      s.grid = uniform_grid(0.0, 5.0, 50);
      s.sample_count = 2000;
      s.band = {-3.0, 0.0};
      s.proposal_scale = 1.0;
      s.potential_offset = -1.0;
      break;
    case SystemKind::kPauli:
      s.grid = uniform_grid(0.0, 5.0, 100);
      s.sample_count = 4000;
      s.band = {-2.0, -1.5};
      s.proposal_scale = 0.1;
      s.potential_offset = -1.75;
      s.magnetic_field = 1.0;
      break;
  }
  return s;
}

void SystemSpec::validate() const {
  if (grid.size() < 2) throw ConfigError("system grid needs >= 2 points");
  const double step = grid[1] - grid[0];
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double d = grid[i] - grid[i - 1];
    if (!(d > 0.0)) throw ConfigError("system grid must be increasing");
    if (std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step))) {
      throw ConfigError("system grid must be uniform");
    }
  }
  if (sample_count == 0) throw ConfigError("sample_count must be >= 1");
  if (system == SystemKind::kCopernicus && total_weeks < grid.size()) {
    throw ConfigError("total_weeks shorter than one subsequence");
  }
  if (system == SystemKind::kNewton && !(r0_low > 0.0 && r0_low <= r0_high)) {
    throw ConfigError("r0 range must satisfy 0 < low <= high");
  }
  if ((system == SystemKind::kSchrodinger || system == SystemKind::kPauli) &&
      !(band.low < band.high)) {
    throw ConfigError("potential band is empty");
  }
}

std::size_t Dataset::obs_dim() const { return observation_dim(spec.system); }
std::size_t Dataset::concept_dim() const {
  return phydisc::concept_dim(spec.system);
}
double Dataset::acceptance_rate() const {
  if (proposals == 0) return 1.0;
  return static_cast<double>(samples.size()) / static_cast<double>(proposals);
}

std::size_t observation_dim(SystemKind s) {
  return s == SystemKind::kCopernicus ? 2 : 1;
}

std::size_t concept_dim(SystemKind s) {
  return s == SystemKind::kPauli ? 4 : 2;
}

std::size_t encoder_input_dim(SystemKind s, std::size_t grid_size) {
  switch (s) {
    case SystemKind::kCopernicus:
      return 2;
    case SystemKind::kNewton:
      return 1;
    case SystemKind::kSchrodinger:
    case SystemKind::kPauli:
      return grid_size;
  }
  return 0;
}

std::size_t control_dim(SystemKind s) {
  return s == SystemKind::kCopernicus ? 0 : 1;
}

std::vector<std::string> concept_names(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus:
      return {"phi_e", "phi_m"};
    case SystemKind::kNewton:
      return {"r", "dr_dt"};
    case SystemKind::kSchrodinger:
      return {"psi", "dpsi_dx"};
    case SystemKind::kPauli:
      return {"psi1", "dpsi1_dx", "psi2", "dpsi2_dx"};
  }
  return {};
}

std::vector<std::string> derivative_concept_names(SystemKind s) {
  switch (s) {
    case SystemKind::kCopernicus:
      return {"dphi_e_dt", "dphi_m_dt"};
    case SystemKind::kNewton:
      return {"dr_dt", "d2r_dt2"};
    case SystemKind::kSchrodinger:
      return {"dpsi_dx", "d2psi_dx2"};
    case SystemKind::kPauli:
      return {"dpsi1_dx", "d2psi1_dx2", "dpsi2_dx", "d2psi2_dx2"};
  }
  return {};
}

Vec encoder_input(SystemKind s, const Sample& sample) {
  switch (s) {
    case SystemKind::kCopernicus:
      return sample.observations.row(0).transpose();
    case SystemKind::kNewton:
      return Vec::Constant(1, control_value(sample.control, 0.0));
    case SystemKind::kSchrodinger:
    case SystemKind::kPauli:
      return sample.observations.col(0);
  }
  return {};
}

double control_value(const Control& c, double t) {
  if (const auto* r0 = std::get_if<double>(&c)) return *r0;
  if (const auto* v = std::get_if<PotentialCoeffs>(&c)) return v->value(t);
  return 0.0;
}

Mat concept_derivatives(const SystemSpec& spec, const Sample& sample) {
  const auto n = sample.truth.rows();
  Mat d(n, sample.truth.cols());
  switch (spec.system) {
    case SystemKind::kCopernicus: {
      const double we = 2.0 * kPi / spec.earth_period;
      const double wm = 2.0 * kPi / spec.mars_period;
      d.col(0).setConstant(we);
      d.col(1).setConstant(wm);
      break;
    }
    case SystemKind::kNewton: {
      const double r0 = control_value(sample.control, 0.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        d(i, 0) = sample.truth(i, 1);
        d(i, 1) = newton_acceleration(sample.truth(i, 0), r0);
      }
      break;
    }
    case SystemKind::kSchrodinger: {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = control_value(sample.control, spec.grid[static_cast<std::size_t>(i)]);
        d(i, 0) = sample.truth(i, 1);
        d(i, 1) = v * sample.truth(i, 0);
      }
      break;
    }
    case SystemKind::kPauli: {
      const double b = spec.magnetic_field;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = control_value(sample.control, spec.grid[static_cast<std::size_t>(i)]);
        d(i, 0) = sample.truth(i, 1);
        d(i, 1) = (v + b) * sample.truth(i, 0);
        d(i, 2) = sample.truth(i, 3);
        d(i, 3) = (v - b) * sample.truth(i, 2);
      }
      break;
    }
  }
  return d;
}

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

GeocentricAngles geocentric_from_heliocentric(double phi_e, double phi_m,
                                              double r_e, double r_m) {
  if (!(r_e > 0.0 && r_m > 0.0)) {
    throw DegenerateGeometryError("orbital radii must be positive");
  }
  const double d2 = r_e * r_e + r_m * r_m - 2.0 * r_e * r_m * std::cos(phi_e + phi_m);
  const double d = std::sqrt(std::max(d2, 0.0));
  if (d <= 1e-12 * std::max(r_e, r_m)) {
    throw DegenerateGeometryError("Earth and Mars coincide");
  }
  GeocentricAngles out;
  out.distance = d;
  out.sun = wrap_angle(kPi - phi_e);
  const double sin_m = (r_e * std::sin(phi_e) + r_m * std::sin(phi_m)) / d;
  const double cos_m = (r_m * std::cos(phi_m) - r_e * std::cos(phi_e)) / d;
  out.mars = wrap_angle(std::atan2(sin_m, cos_m));
  return out;
}

double newton_acceleration(double r, double r0) {
  return (r0 * r0 / r - 1.0) / (r * r);
}

void NewtonField::rhs(double, const Vec& h, Vec& dh) const {
  dh.resize(2);
  dh[0] = h[1];
  dh[1] = newton_acceleration(h[0], r0_);
}

void WaveField::rhs(double x, const Vec& h, Vec& dh) const {
  const double v = v_.value(x);
  dh.resize(h.size());
  for (std::size_t c = 0; c < shifts_.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(2 * c);
    dh[i] = h[i + 1];
    dh[i + 1] = (v + shifts_[c]) * h[i];
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Dataset gen_copernicus(const SystemSpec& spec) {
  expect_system(spec, SystemKind::kCopernicus);
  Dataset d = make_dataset(spec);
  const double we = 2.0 * kPi / spec.earth_period;
  const double wm = 2.0 * kPi / spec.mars_period;
  const std::size_t len = spec.grid.size();
  const double week = spec.grid[1] - spec.grid[0];

  std::mt19937_64 phase_rng(derive_seed(spec.seed, kStreamPhases, 0));
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  const double phi_e0 = phase(phase_rng);
  const double phi_m0 = phase(phase_rng);

  parallel_for(spec.sample_count, [&](std::size_t k) {
    std::mt19937_64 rng(derive_seed(spec.seed, kStreamSample, k));
    std::uniform_int_distribution<std::size_t> start_dist(
        0, spec.total_weeks - len);
    const std::size_t start = start_dist(rng);
    const double start_t = static_cast<double>(start) * week;
    // Concepts are unwrapped along the subsequence from wrapped start values.
    const double e0 = wrap_angle(phi_e0 + we * start_t);
    const double m0 = wrap_angle(phi_m0 + wm * start_t);
    Sample& s = d.samples[k];
    const auto n = static_cast<Eigen::Index>(len);
    s.observations.resize(n, 2);
    s.truth.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = spec.grid[static_cast<std::size_t>(i)] - spec.grid[0];
      const double pe = e0 + we * t;
      const double pm = m0 + wm * t;
      const auto g = geocentric_from_heliocentric(pe, pm, spec.earth_radius,
                                                  spec.mars_radius);
      s.observations(i, 0) = g.sun;
      s.observations(i, 1) = g.mars;
      s.truth(i, 0) = pe;
      s.truth(i, 1) = pm;
    }
    s.control = std::monostate{};
  });
  return d;
}

Dataset gen_newton(const SystemSpec& spec) {
  expect_system(spec, SystemKind::kNewton);
  Dataset d = make_dataset(spec);
  const SolverConfig cfg = sim_solver(spec);
  parallel_for(spec.sample_count, [&](std::size_t k) {
    std::mt19937_64 rng(derive_seed(spec.seed, kStreamSample, k));
    std::uniform_real_distribution<double> r0_dist(spec.r0_low, spec.r0_high);
    const double r0 = r0_dist(rng);
    NewtonField field(r0);
    Vec h0(2);
    h0 << r0, 0.0;
    const Trajectory traj = integrate(field, h0, cfg);
    Sample& s = d.samples[k];
    const auto n = static_cast<Eigen::Index>(spec.grid.size());
    s.observations.resize(n, 1);
    s.truth.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      s.truth.row(i) = traj.states[static_cast<std::size_t>(i)].transpose();
      s.observations(i, 0) = s.truth(i, 0);
    }
    s.control = r0;
  });
  return d;
}

Dataset gen_schrodinger(const SystemSpec& spec) {
  expect_system(spec, SystemKind::kSchrodinger);
  return gen_wave(spec, {0.0});
}

Dataset gen_pauli(const SystemSpec& spec) {
  expect_system(spec, SystemKind::kPauli);
  return gen_wave(spec, {spec.magnetic_field, -spec.magnetic_field});
}

Dataset generate(const SystemSpec& spec) {
  switch (spec.system) {
    case SystemKind::kCopernicus:
      return gen_copernicus(spec);
    case SystemKind::kNewton:
      return gen_newton(spec);
    case SystemKind::kSchrodinger:
      return gen_schrodinger(spec);
    case SystemKind::kPauli:
      return gen_pauli(spec);
  }
  throw ConfigError("unknown system");
}

}  // namespace phydisc
