#pragma once

// Encoder -> latent Neural ODE -> decoder. Samples are processed as a batch:
// the latent state of K samples is one flat vector of length latent_dim * K,
// sample k occupying entries [k * latent_dim, (k + 1) * latent_dim).

#include <cstdint>
#include <string>
#include <vector>

#include "phydisc/nn.hpp"
#include "phydisc/odeint.hpp"
#include "phydisc/simulate.hpp"

namespace phydisc {

enum class LatentMode { kFirstOrder, kSecondOrder };

std::string to_string(LatentMode m);
LatentMode latent_mode_from_string(const std::string& name);

struct ModelSpec {
  SystemKind system = SystemKind::kSchrodinger;
  LatentMode mode = LatentMode::kFirstOrder;
  std::size_t encoder_input_dim = 1;
  std::size_t obs_dim = 1;
  std::size_t control_dim = 0;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> coder_hidden{64, 64};
  Activation coder_activation = Activation::kRelu;
  std::vector<std::size_t> field_hidden{16, 16};
  Activation field_activation = Activation::kTanh;

  /// Network sizes for one system, grid length and latent size.
  static ModelSpec defaults(SystemKind system, std::size_t grid_size,
                            std::size_t latent_dim,
                            LatentMode mode = LatentMode::kFirstOrder);

  /// latent_dim in first-order mode, latent_dim / 2 in second-order mode.
  std::size_t field_output_dim() const;
  MlpSpec encoder_spec() const;
  MlpSpec field_spec() const;
  MlpSpec decoder_spec() const;
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Encoder, governing-function and decoder weights. The flat layout used by
/// the optimizers is encoder | field | decoder.
struct ModelParams {
  ModelSpec spec;
  MlpParams encoder;
  MlpParams field;
  MlpParams decoder;

  explicit ModelParams(const ModelSpec& s);

  std::size_t size() const;
  Vec flat() const;
  void assign(const Vec& flat);
};

/// Kaiming initialisation of all three networks from one seed.
ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);

/// Batched encoder outputs, latent_dim x K each.
struct Encoding {
  Mat mu;
  Mat sigma;
};

/// mu is the first half of the encoder output, sigma = exp(second half).
Encoding encode_batch(const ModelParams& params, const Mat& inputs,
                      MlpTape* tape = nullptr);
Encoding encode(const ModelParams& params, const Vec& input);

/// h = mu + sigma * eps with eps = 0.
Mat sample_latent(const Mat& mu, const Mat& sigma);

/// Per-sample control values for a batch at a given time or position.
class BatchControl {
 public:
  BatchControl() = default;
  BatchControl(SystemKind system, const std::vector<const Control*>& controls);

  std::size_t dim() const { return dim_; }
  std::size_t batch() const { return batch_; }
  /// Writes the 1 x K control row at t; no-op when dim() == 0.
  void eval(double t, Eigen::RowVectorXd& out) const;

 private:
  std::size_t dim_ = 0;
  std::size_t batch_ = 0;
  bool constant_ = true;
  Eigen::RowVectorXd constant_values_;
  Mat coeffs_;  // 9 x K sinusoid coefficients
  Eigen::RowVectorXd offsets_;
};

/// Neural ODE right-hand side for a whole batch; parameters are the field
/// network's. Time is never an input to the network.
class LatentField : public OdeField {
 public:
  LatentField(const ModelParams& params, const BatchControl& control);

  std::size_t state_size() const override;
  std::size_t param_size() const override;
  void rhs(double t, const Vec& h, Vec& dh) const override;
  void vjp(double t, const Vec& h, const Vec& a, Vec& grad_h,
           Eigen::Ref<Vec> grad_params_accum) const override;

 private:
  void network_input(double t, const Vec& h, Mat& in) const;

  const ModelParams& params_;
  const BatchControl& control_;
  std::size_t latent_;
  std::size_t batch_;
};

/// Single-sample latent right-hand side.
Vec latent_rhs(const ModelParams& params, double t, const Vec& h,
               const Control& control);

/// Inputs and targets for a batch of samples.
struct Batch {
  Mat encoder_inputs;                   ///< encoder_input_dim x K
  std::vector<const Control*> controls;
  std::vector<Mat> targets;             ///< per grid index, obs_dim x K
  std::vector<std::size_t> indices;     ///< dataset rows
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);

struct BatchRollout {
  Encoding encoding;
  MlpTape encoder_tape;
  Trajectory trajectory;
  std::vector<Mat> reconstructions;  ///< per grid index, obs_dim x K
  MlpTape decoder_tape;              ///< over all grid indices, index-major
};

/// encode -> h0 = mu -> integrate -> decode every h(t_i).
BatchRollout rollout_batch(const ModelParams& params, const Batch& batch,
                           const BatchControl& control,
                           const SolverConfig& cfg);

struct LatentTrajectory {
  Vec mu;
  Vec sigma;
  Mat states;           ///< grid x latent_dim
  Mat reconstructions;  ///< grid x obs_dim
};

LatentTrajectory rollout(const ModelParams& params, const Vec& input,
                         const Control& control, const SolverConfig& cfg);

/// Latent states at one grid index as latent_dim x K.
Mat latent_states(const Trajectory& traj, std::size_t grid_index,
                  std::size_t latent_dim);

}  // namespace phydisc
