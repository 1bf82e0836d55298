#include "phydisc/model.hpp"

#include <cmath>

#include "phydisc/errors.hpp"

namespace phydisc {

namespace {

constexpr std::uint64_t kStreamEncoder = 11;
constexpr std::uint64_t kStreamField = 12;
constexpr std::uint64_t kStreamDecoder = 13;

constexpr std::size_t kHarmonics = std::tuple_size_v<decltype(PotentialCoeffs::c)>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

std::string to_string(LatentMode m) {
  return m == LatentMode::kFirstOrder ? "first_order" : "second_order";
}

LatentMode latent_mode_from_string(const std::string& name) {
  if (name == "first_order" || name == "first-order") return LatentMode::kFirstOrder;
  if (name == "second_order" || name == "second-order") return LatentMode::kSecondOrder;
  throw ConfigError("unknown latent mode '" + name + "'");
}

ModelSpec ModelSpec::defaults(SystemKind system, std::size_t grid_size,
                              std::size_t latent_dim, LatentMode mode) {
  ModelSpec s;
  s.system = system;
  s.mode = mode;
  s.encoder_input_dim = phydisc::encoder_input_dim(system, grid_size);
  s.obs_dim = observation_dim(system);
  s.control_dim = phydisc::control_dim(system);
  s.latent_dim = latent_dim;
  if (system == SystemKind::kCopernicus) {
    s.coder_hidden = {30, 30};
    s.coder_activation = Activation::kTanh;
  } else {
    s.coder_hidden = {64, 64};
    s.coder_activation = Activation::kRelu;
  }
  s.field_hidden = {16, 16};
  s.field_activation = Activation::kTanh;
  return s;
}

std::size_t ModelSpec::field_output_dim() const {
  return mode == LatentMode::kFirstOrder ? latent_dim : latent_dim / 2;
}

MlpSpec ModelSpec::encoder_spec() const {
  return MlpSpec{encoder_input_dim, coder_hidden, 2 * latent_dim, coder_activation};
}

MlpSpec ModelSpec::field_spec() const {
  return MlpSpec{latent_dim + control_dim, field_hidden, field_output_dim(),
                 field_activation};
}

MlpSpec ModelSpec::decoder_spec() const {
  return MlpSpec{latent_dim, coder_hidden, obs_dim, coder_activation};
}

void ModelSpec::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (mode == LatentMode::kSecondOrder && latent_dim % 2 != 0) {
    throw ConfigError("second-order mode needs an even latent_dim, got " +
                      std::to_string(latent_dim));
  }
  if (control_dim > 1) throw ConfigError("control_dim must be 0 or 1");
  encoder_spec().validate();
  field_spec().validate();
  decoder_spec().validate();
}

ModelParams::ModelParams(const ModelSpec& s)
    : spec(s),
      encoder(s.encoder_spec()),
      field(s.field_spec()),
      decoder(s.decoder_spec()) {
  spec.validate();
}

std::size_t ModelParams::size() const {
  return encoder.size() + field.size() + decoder.size();
}

Vec ModelParams::flat() const {
  Vec out(idx(size()));
  out << encoder.values(), field.values(), decoder.values();
  return out;
}

void ModelParams::assign(const Vec& flat) {
  if (flat.size() != idx(size())) {
    throw ShapeError("model parameter vector has length " +
                     std::to_string(flat.size()) + ", expected " +
                     std::to_string(size()));
  }
  const auto ne = idx(encoder.size());
  const auto nf = idx(field.size());
  const auto nd = idx(decoder.size());
  encoder.values() = flat.segment(0, ne);
  field.values() = flat.segment(ne, nf);
  decoder.values() = flat.segment(ne + nf, nd);
}

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams p(spec);
  p.encoder = init_kaiming(spec.encoder_spec(), derive_seed(seed, kStreamEncoder, 0));
  p.field = init_kaiming(spec.field_spec(), derive_seed(seed, kStreamField, 0));
  p.decoder = init_kaiming(spec.decoder_spec(), derive_seed(seed, kStreamDecoder, 0));
  return p;
}

Encoding encode_batch(const ModelParams& params, const Mat& inputs, MlpTape* tape) {
  const Mat out = forward_batch(params.encoder, inputs, tape);
  const auto l = idx(params.spec.latent_dim);
  Encoding e;
  e.mu = out.topRows(l);
  e.sigma = out.bottomRows(l).array().exp();
  return e;
}

Encoding encode(const ModelParams& params, const Vec& input) {
  return encode_batch(params, Mat(input), nullptr);
}

Mat sample_latent(const Mat& mu, const Mat& sigma) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) {
    throw ShapeError("sample_latent: mu and sigma shapes differ");
  }
  return mu;
}

BatchControl::BatchControl(SystemKind system,
                           const std::vector<const Control*>& controls)
    : dim_(control_dim(system)), batch_(controls.size()) {
  if (dim_ == 0) return;
  const auto k = idx(batch_);
  if (system == SystemKind::kNewton) {
    constant_ = true;
    constant_values_.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto* r0 = std::get_if<double>(controls[static_cast<std::size_t>(j)]);
      if (r0 == nullptr) throw ShapeError("Newton sample lacks an r0 control");
      constant_values_[j] = *r0;
    }
    return;
  }
  constant_ = false;
  coeffs_.resize(idx(kHarmonics), k);
  offsets_.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto* v =
        std::get_if<PotentialCoeffs>(controls[static_cast<std::size_t>(j)]);
    if (v == nullptr) throw ShapeError("sample lacks a potential control");
    for (std::size_t h = 0; h < kHarmonics; ++h) coeffs_(idx(h), j) = v->c[h];
    offsets_[j] = v->offset;
  }
}

void BatchControl::eval(double t, Eigen::RowVectorXd& out) const {
  if (dim_ == 0) return;
  if (constant_) {
    out = constant_values_;
    return;
  }
  Eigen::RowVectorXd basis(idx(kHarmonics));
  for (std::size_t h = 0; h < kHarmonics; ++h) {
    basis[idx(h)] = std::sin(static_cast<double>(h + 1) * t);
  }
  out.noalias() = basis * coeffs_;
  out += offsets_;
}

LatentField::LatentField(const ModelParams& params, const BatchControl& control)
    : params_(params),
      control_(control),
      latent_(params.spec.latent_dim),
      batch_(control.batch()) {
  if (control.dim() != params.spec.control_dim) {
    throw ShapeError("control dimension does not match the model");
  }
}

std::size_t LatentField::state_size() const { return latent_ * batch_; }

std::size_t LatentField::param_size() const { return params_.field.size(); }

void LatentField::network_input(double t, const Vec& h, Mat& in) const {
  const auto l = idx(latent_);
  const auto k = idx(batch_);
  in.resize(l + idx(control_.dim()), k);
  in.topRows(l) = Eigen::Map<const Mat>(h.data(), l, k);
  if (control_.dim() > 0) {
    Eigen::RowVectorXd row;
    control_.eval(t, row);
    in.row(l) = row;
  }
}

void LatentField::rhs(double t, const Vec& h, Vec& dh) const {
  if (h.size() != idx(state_size())) throw ShapeError("latent state length mismatch");
  Mat in;
  network_input(t, h, in);
  const Mat g = forward_batch(params_.field, in);
  dh.resize(h.size());
  Eigen::Map<Mat> out(dh.data(), idx(latent_), idx(batch_));
  if (params_.spec.mode == LatentMode::kFirstOrder) {
    out = g;
    return;
  }
  Eigen::Map<const Mat> hm(h.data(), idx(latent_), idx(batch_));
  for (Eigen::Index p = 0; p < g.rows(); ++p) {
    out.row(2 * p) = hm.row(2 * p + 1);
    out.row(2 * p + 1) = g.row(p);
  }
}

void LatentField::vjp(double t, const Vec& h, const Vec& a, Vec& grad_h,
                      Eigen::Ref<Vec> grad_params_accum) const {
  const auto l = idx(latent_);
  const auto k = idx(batch_);
  Mat in;
  network_input(t, h, in);
  MlpTape tape;
  forward_batch(params_.field, in, &tape);
  Eigen::Map<const Mat> am(a.data(), l, k);
  Mat cot;
  if (params_.spec.mode == LatentMode::kFirstOrder) {
    cot = am;
  } else {
    cot.resize(l / 2, k);
    for (Eigen::Index p = 0; p < l / 2; ++p) cot.row(p) = am.row(2 * p + 1);
  }
  Mat gin;
  vjp_batch(params_.field, tape, cot, &gin, grad_params_accum);
  grad_h.resize(a.size());
  Eigen::Map<Mat> gm(grad_h.data(), l, k);
  gm = gin.topRows(l);
  if (params_.spec.mode == LatentMode::kSecondOrder) {
    for (Eigen::Index p = 0; p < l / 2; ++p) gm.row(2 * p + 1) += am.row(2 * p);
  }
}

Vec latent_rhs(const ModelParams& params, double t, const Vec& h,
               const Control& control) {
  if (h.size() != idx(params.spec.latent_dim)) {
    throw ShapeError("latent_rhs: state has length " + std::to_string(h.size()));
  }
  BatchControl bc(params.spec.system, {&control});
  LatentField field(params, bc);
  Vec dh;
  field.rhs(t, h, dh);
  return dh;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  const SystemKind sys = data.spec.system;
  const std::size_t grid = data.grid_size();
  const auto k = idx(indices.size());
  Batch b;
  b.indices = indices;
  b.encoder_inputs.resize(idx(encoder_input_dim(sys, grid)), k);
  b.targets.assign(grid, Mat(idx(data.obs_dim()), k));
  b.controls.reserve(indices.size());
  for (Eigen::Index j = 0; j < k; ++j) {
    const std::size_t row = indices[static_cast<std::size_t>(j)];
    if (row >= data.samples.size()) throw ShapeError("batch index out of range");
    const Sample& s = data.samples[row];
    b.encoder_inputs.col(j) = encoder_input(sys, s);
    b.controls.push_back(&s.control);
    for (std::size_t i = 0; i < grid; ++i) {
      b.targets[i].col(j) = s.observations.row(idx(i)).transpose();
    }
  }
  return b;
}

BatchRollout rollout_batch(const ModelParams& params, const Batch& batch,
                           const BatchControl& control,
                           const SolverConfig& cfg) {
  const auto l = idx(params.spec.latent_dim);
  const auto k = batch.encoder_inputs.cols();
  if (idx(control.batch()) != k) throw ShapeError("control batch size mismatch");
  BatchRollout r;
  r.encoding = encode_batch(params, batch.encoder_inputs, &r.encoder_tape);
  const Mat h0 = sample_latent(r.encoding.mu, r.encoding.sigma);
  LatentField field(params, control);
  r.trajectory =
      integrate(field, Eigen::Map<const Vec>(h0.data(), l * k), cfg);
  const std::size_t grid = r.trajectory.states.size();
  Mat all(l, k * idx(grid));
  for (std::size_t i = 0; i < grid; ++i) {
    all.middleCols(idx(i) * k, k) =
        Eigen::Map<const Mat>(r.trajectory.states[i].data(), l, k);
  }
  const Mat dec = forward_batch(params.decoder, all, &r.decoder_tape);
  r.reconstructions.resize(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    r.reconstructions[i] = dec.middleCols(idx(i) * k, k);
  }
  return r;
}

LatentTrajectory rollout(const ModelParams& params, const Vec& input,
                         const Control& control, const SolverConfig& cfg) {
  Batch b;
  b.encoder_inputs = input;
  b.controls = {&control};
  BatchControl bc(params.spec.system, b.controls);
  const BatchRollout r = rollout_batch(params, b, bc, cfg);
  LatentTrajectory out;
  out.mu = r.encoding.mu.col(0);
  out.sigma = r.encoding.sigma.col(0);
  const std::size_t grid = r.trajectory.states.size();
  out.states.resize(idx(grid), idx(params.spec.latent_dim));
  out.reconstructions.resize(idx(grid), idx(params.spec.obs_dim));
  for (std::size_t i = 0; i < grid; ++i) {
    out.states.row(idx(i)) = r.trajectory.states[i].transpose();
    out.reconstructions.row(idx(i)) = r.reconstructions[i].col(0).transpose();
  }
  return out;
}

Mat latent_states(const Trajectory& traj, std::size_t grid_index,
                  std::size_t latent_dim) {
  const Vec& s = traj.states.at(grid_index);
  const auto l = idx(latent_dim);
  return Eigen::Map<const Mat>(s.data(), l, s.size() / l);
}

}  // namespace phydisc
