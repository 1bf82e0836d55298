#pragma once

// Dataset generators for the four physical systems: heliocentric orbits,
// radial Kepler motion, the stationary Schrödinger equation and the
// two-component Pauli equation in a uniform field.

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "phydisc/nn.hpp"
#include "phydisc/odeint.hpp"

namespace phydisc {

enum class SystemKind { kCopernicus, kNewton, kSchrodinger, kPauli };

std::string to_string(SystemKind s);
SystemKind system_from_string(const std::string& name);
const std::vector<SystemKind>& all_systems();

/// V(x) = sum_k c_k sin(k x) + offset, k = 1..9.
struct PotentialCoeffs {
  std::array<double, 9> c{};
  double offset = -1.0;

  double value(double x) const;
  bool operator==(const PotentialCoeffs&) const = default;
};

/// Open acceptance band low < V(x) < high.
struct PotentialBand {
  double low = -3.0;
  double high = 0.0;
  bool operator==(const PotentialBand&) const = default;
};

/// Proposal c_k = scale * N(0, 1) around a fixed offset.
struct PotentialProposal {
  double scale = 1.0;
  double offset = -1.0;
  std::vector<double> audit_grid;
  std::size_t max_draws = 10'000'000;
};

struct PotentialDraw {
  PotentialCoeffs coeffs;
  std::size_t draws = 0;
};

bool potential_in_band(const PotentialCoeffs& v, const PotentialBand& band,
                       const std::vector<double>& grid);

/// Rejection-samples one potential from a stream seeded by `seed`. Throws
/// SamplingExhaustedError after proposal.max_draws rejected proposals.
PotentialDraw sample_potential(std::uint64_t seed, const PotentialBand& band,
                               const PotentialProposal& proposal);

/// Per-sample control: none, the initial radius r0, or a potential.
using Control = std::variant<std::monostate, double, PotentialCoeffs>;

struct Sample {
  Mat observations;  ///< grid x obs_dim
  Control control;
  Mat truth;  ///< grid x concept_dim, analysis only
};

struct SystemSpec {
  SystemKind system = SystemKind::kSchrodinger;
  std::vector<double> grid;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;

  // Heliocentric constants (AU, weeks).
  double earth_radius = 1.0;
  double mars_radius = 1.524;
  double earth_period = 52.14;
  double mars_period = 98.14;
  std::size_t total_weeks = 3665;

  // Radial Kepler.
  double r0_low = 1.0;
  double r0_high = 3.0;

  // Potentials.
  PotentialBand band;
  double proposal_scale = 1.0;
  double potential_offset = -1.0;
  std::size_t audit_points = 200;
  std::size_t max_draws_per_sample = 10'000'000;
  double magnetic_field = 1.0;

  double solver_tol = 1e-10;

  /// Full-scale defaults for one system.
  static SystemSpec defaults(SystemKind system);
  void validate() const;
  bool operator==(const SystemSpec&) const = default;
};

struct Dataset {
  SystemSpec spec;
  std::string generator_version;
  std::size_t proposals = 0;  ///< potential proposals drawn, 0 otherwise
  std::vector<Sample> samples;

  std::size_t grid_size() const { return spec.grid.size(); }
  std::size_t obs_dim() const;
  std::size_t concept_dim() const;
  double acceptance_rate() const;
};

extern const char* const kGeneratorVersion;

std::size_t observation_dim(SystemKind s);
std::size_t concept_dim(SystemKind s);
/// Length of the encoder input: first-moment angles, r0, or the full density.
std::size_t encoder_input_dim(SystemKind s, std::size_t grid_size);
std::size_t control_dim(SystemKind s);
std::vector<std::string> concept_names(SystemKind s);
std::vector<std::string> derivative_concept_names(SystemKind s);

Vec encoder_input(SystemKind s, const Sample& sample);
/// Control value fed to the governing function at time/position t.
double control_value(const Control& c, double t);

/// Analytic derivatives of the concepts along one sample (grid x concepts):
/// (phi_e', phi_m'), (r', r''), (psi', V psi) or (psi1', (V+B) psi1,
/// psi2', (V-B) psi2), with second derivatives taken from the governing
/// equations rather than by differencing.
Mat concept_derivatives(const SystemSpec& spec, const Sample& sample);

struct GeocentricAngles {
  double sun = 0.0;   ///< theta_s
  double mars = 0.0;  ///< theta_m
  double distance = 0.0;
};

/// Earth-centred angles of the Sun and Mars, wrapped to (-pi, pi]. Throws
/// DegenerateGeometryError when Earth and Mars coincide.
GeocentricAngles geocentric_from_heliocentric(double phi_e, double phi_m,
                                              double r_e, double r_m);

double wrap_angle(double a);

/// r'' = (r0^2 / r - 1) / r^2 for the normalised radial Kepler problem.
double newton_acceleration(double r, double r0);

/// (r, r') right-hand side for one initial radius.
class NewtonField : public OdeField {
 public:
  explicit NewtonField(double r0) : r0_(r0) {}
  std::size_t state_size() const override { return 2; }
  void rhs(double t, const Vec& h, Vec& dh) const override;

 private:
  double r0_;
};

/// psi_c'' = (V(x) + shift_c) psi_c for each channel c; state is
/// (psi_1, psi_1', psi_2, psi_2', ...).
class WaveField : public OdeField {
 public:
  WaveField(PotentialCoeffs v, std::vector<double> shifts)
      : v_(v), shifts_(std::move(shifts)) {}
  std::size_t state_size() const override { return 2 * shifts_.size(); }
  void rhs(double x, const Vec& h, Vec& dh) const override;

 private:
  PotentialCoeffs v_;
  std::vector<double> shifts_;
};

Dataset gen_copernicus(const SystemSpec& spec);
Dataset gen_newton(const SystemSpec& spec);
Dataset gen_schrodinger(const SystemSpec& spec);
Dataset gen_pauli(const SystemSpec& spec);
Dataset generate(const SystemSpec& spec);

/// Deterministic per-(seed, stream, index) generator seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index);

}  // namespace phydisc
