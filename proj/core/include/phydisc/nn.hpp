#pragma once

// Fully connected networks over a flat parameter vector, with forward
// evaluation and reverse-mode vector-Jacobian products.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace phydisc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { kTanh, kRelu };
enum class OutputActivation { kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims{16};
  std::size_t output_dim = 1;
  Activation activation = Activation::kTanh;
  OutputActivation output_activation = OutputActivation::kIdentity;

  /// Throws ConfigError when a dimension is zero or no hidden layer exists.
  void validate() const;
  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  std::size_t param_count() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Where one affine layer lives inside the flat parameter vector. The weight
/// block is stored column-major as a fan_out x fan_in matrix.
struct LayerSlot {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

class MlpParams {
 public:
  MlpParams() = default;
  /// Zero-initialised parameters for `spec`.
  explicit MlpParams(MlpSpec spec);
  MlpParams(MlpSpec spec, Vec values);

  const MlpSpec& spec() const { return spec_; }
  const std::vector<LayerSlot>& layout() const { return layout_; }
  const Vec& values() const { return values_; }
  Vec& values() { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  Eigen::Map<const Mat> weight(std::size_t layer) const;
  Eigen::Map<const Vec> bias(std::size_t layer) const;
  Eigen::Map<Mat> weight(std::size_t layer);
  Eigen::Map<Vec> bias(std::size_t layer);

 private:
  MlpSpec spec_;
  std::vector<LayerSlot> layout_;
  Vec values_;
};

/// Kaiming fan-in normal initialisation. Hidden layers use the gain of their
/// activation (sqrt(2) for relu, 5/3 for tanh); the identity output layer
/// uses gain 1. Biases are zero.
MlpParams init_kaiming(const MlpSpec& spec, std::uint64_t seed);

/// Layer activations retained by a batched forward pass for reuse in vjp.
struct MlpTape {
  /// activations[0] is the input batch, activations[l] the output of layer l.
  std::vector<Mat> activations;
};

/// Batched forward pass. Columns of `inputs` are independent samples.
Mat forward_batch(const MlpParams& params, const Mat& inputs,
                  MlpTape* tape = nullptr);

Vec forward(const MlpParams& params, const Vec& input);

/// Reverse pass through a recorded tape. `cotangent` holds one column per
/// sample. Parameter gradients are summed over the batch and added into
/// `grad_params_accum` (length = params.size()); `grad_input` may be null.
void vjp_batch(const MlpParams& params, const MlpTape& tape,
               const Mat& cotangent, Mat* grad_input,
               Eigen::Ref<Vec> grad_params_accum);

struct VjpResult {
  Vec grad_input;
  Vec grad_params;
};

VjpResult vjp(const MlpParams& params, const Vec& input, const Vec& cotangent);

}  // namespace phydisc
