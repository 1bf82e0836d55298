#include "phydisc/nn.hpp"

#include <cmath>
#include <random>

#include "phydisc/errors.hpp"

namespace phydisc {

namespace {

std::vector<LayerSlot> make_layout(const MlpSpec& spec) {
  std::vector<LayerSlot> layout;
  std::size_t offset = 0;
  std::size_t fan_in = spec.input_dim;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_out =
        l < spec.hidden_dims.size() ? spec.hidden_dims[l] : spec.output_dim;
    LayerSlot slot;
    slot.fan_in = fan_in;
    slot.fan_out = fan_out;
    slot.weight_offset = offset;
    offset += fan_in * fan_out;
    slot.bias_offset = offset;
    offset += fan_out;
    layout.push_back(slot);
    fan_in = fan_out;
  }
  return layout;
}

double activation_gain(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return std::sqrt(2.0);
    case Activation::kTanh:
      return 5.0 / 3.0;
  }
  return 1.0;
}

// Eigen evaluates tanh on doubles one scalar libm call at a time, which
// dominates training. This goes through the packet exp instead, with a Taylor
// series near zero where (1 - t) / (1 + t) would lose relative accuracy.
void tanh_inplace(Mat& z) {
  using Arr = Eigen::ArrayXXd;
  const Arr x = z.array();
  const Arr ax = x.abs();
  const Arr t = (-2.0 * ax).exp();
  const Arr large = (1.0 - t) / (1.0 + t);
  const Arr x2 = x.square();
  const Arr small =
      x * (1.0 + x2 * (-1.0 / 3.0 +
                       x2 * (2.0 / 15.0 +
                             x2 * (-17.0 / 315.0 +
                                   x2 * (62.0 / 2835.0 +
                                         x2 * (-1382.0 / 155925.0 +
                                               x2 * (21844.0 / 6081075.0)))))));
  z = (ax < 0.0625).select(small, (x < 0.0).select(-large, large));
}

void apply_activation(Activation a, Mat& z) {
  switch (a) {
    case Activation::kTanh:
      tanh_inplace(z);
      break;
    case Activation::kRelu:
      z = z.array().max(0.0);
      break;
  }
}

// Multiplies `g` in place by the activation derivative, expressed through the
// activation output `y`. relu'(0) is taken as 0.
void apply_activation_derivative(Activation a, const Mat& y, Mat& g) {
  switch (a) {
    case Activation::kTanh:
      g.array() *= 1.0 - y.array().square();
      break;
    case Activation::kRelu:
      g.array() *= (y.array() > 0.0).cast<double>();
      break;
  }
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw ConfigError("MlpSpec: input and output dims must be >= 1");
  }
  if (hidden_dims.empty()) {
    throw ConfigError("MlpSpec: at least one hidden layer is required");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("MlpSpec: hidden dims must be >= 1");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t total = 0;
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t fan_out =
        l < hidden_dims.size() ? hidden_dims[l] : output_dim;
    total += (fan_in + 1) * fan_out;
    fan_in = fan_out;
  }
  return total;
}

MlpParams::MlpParams(MlpSpec spec)
    : MlpParams(spec, Vec::Zero(static_cast<Eigen::Index>(spec.param_count()))) {}

MlpParams::MlpParams(MlpSpec spec, Vec values)
    : spec_(std::move(spec)), values_(std::move(values)) {
  spec_.validate();
  layout_ = make_layout(spec_);
  if (static_cast<std::size_t>(values_.size()) != spec_.param_count()) {
    throw ShapeError("MlpParams: expected " +
                     std::to_string(spec_.param_count()) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Eigen::Map<const Mat> MlpParams::weight(std::size_t layer) const {
  const LayerSlot& s = layout_[layer];
  return {values_.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
          static_cast<Eigen::Index>(s.fan_in)};
}

Eigen::Map<const Vec> MlpParams::bias(std::size_t layer) const {
  const LayerSlot& s = layout_[layer];
  return {values_.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out)};
}

Eigen::Map<Mat> MlpParams::weight(std::size_t layer) {
  const LayerSlot& s = layout_[layer];
  return {values_.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
          static_cast<Eigen::Index>(s.fan_in)};
}

Eigen::Map<Vec> MlpParams::bias(std::size_t layer) {
  const LayerSlot& s = layout_[layer];
  return {values_.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out)};
}

MlpParams init_kaiming(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams params(spec);
  std::mt19937_64 rng(seed);
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const LayerSlot& slot = params.layout()[l];
    const double gain = l + 1 < layers ? activation_gain(spec.activation) : 1.0;
    std::normal_distribution<double> normal(
        0.0, gain / std::sqrt(static_cast<double>(slot.fan_in)));
    auto w = params.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
    }
  }
  return params;
}

Mat forward_batch(const MlpParams& params, const Mat& inputs, MlpTape* tape) {
  const MlpSpec& spec = params.spec();
  if (static_cast<std::size_t>(inputs.rows()) != spec.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(inputs.rows()) +
                     " rows, network expects " + std::to_string(spec.input_dim));
  }
  const std::size_t layers = spec.layer_count();
  if (tape != nullptr) {
    tape->activations.resize(layers + 1);
    tape->activations[0] = inputs;
  }
  Mat current = inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    Mat z = params.weight(l) * current;
    z.colwise() += params.bias(l);
    if (l + 1 < layers) apply_activation(spec.activation, z);
    current = std::move(z);
    if (tape != nullptr) tape->activations[l + 1] = current;
  }
  return current;
}

Vec forward(const MlpParams& params, const Vec& input) {
  return forward_batch(params, input);
}

void vjp_batch(const MlpParams& params, const MlpTape& tape,
               const Mat& cotangent, Mat* grad_input,
               Eigen::Ref<Vec> grad_params_accum) {
  const MlpSpec& spec = params.spec();
  const std::size_t layers = spec.layer_count();
  if (tape.activations.size() != layers + 1) {
    throw ShapeError("vjp: tape does not match network depth");
  }
  if (static_cast<std::size_t>(cotangent.rows()) != spec.output_dim ||
      cotangent.cols() != tape.activations[0].cols()) {
    throw ShapeError("vjp: cotangent shape does not match network output");
  }
  if (static_cast<std::size_t>(grad_params_accum.size()) != params.size()) {
    throw ShapeError("vjp: parameter gradient buffer has wrong length");
  }
  Mat g = cotangent;
  for (std::size_t l = layers; l-- > 0;) {
    const LayerSlot& slot = params.layout()[l];
    const Mat& input = tape.activations[l];
    Eigen::Map<Mat> gw(grad_params_accum.data() + slot.weight_offset,
                       static_cast<Eigen::Index>(slot.fan_out),
                       static_cast<Eigen::Index>(slot.fan_in));
    gw.noalias() += g * input.transpose();
    grad_params_accum.segment(static_cast<Eigen::Index>(slot.bias_offset),
                              static_cast<Eigen::Index>(slot.fan_out)) +=
        g.rowwise().sum();
    if (l == 0 && grad_input == nullptr) break;
    Mat prev = params.weight(l).transpose() * g;
    if (l > 0) {
      apply_activation_derivative(spec.activation, input, prev);
      g = std::move(prev);
    } else {
      *grad_input = std::move(prev);
    }
  }
}

VjpResult vjp(const MlpParams& params, const Vec& input, const Vec& cotangent) {
  MlpTape tape;
  forward_batch(params, input, &tape);
  VjpResult out;
  out.grad_params = Vec::Zero(static_cast<Eigen::Index>(params.size()));
  Mat grad_input;
  vjp_batch(params, tape, cotangent, &grad_input, out.grad_params);
  out.grad_input = grad_input.col(0);
  return out;
}

}  // namespace phydisc
