#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phydisc/errors.hpp"
#include "phydisc/model.hpp"
#include "phydisc/train.hpp"

using namespace phydisc;

namespace {

Dataset tiny_dataset(SystemKind kind, std::size_t samples, std::size_t grid_points,
                     double grid_end, std::uint64_t seed = 4) {
  SystemSpec spec = SystemSpec::defaults(kind);
  spec.sample_count = samples;
  spec.seed = seed;
  if (kind != SystemKind::kCopernicus) {
    spec.grid = uniform_grid(0.0, grid_end, grid_points);
  }
  return generate(spec);
}

ModelSpec small_spec(SystemKind kind, std::size_t grid, std::size_t latent,
                     LatentMode mode = LatentMode::kFirstOrder) {
  ModelSpec s = ModelSpec::defaults(kind, grid, latent, mode);
  s.coder_hidden = {8, 8};
  s.field_hidden = {6, 6};
  return s;
}

SolverConfig tight(const std::vector<double>& grid, double tol = 1e-10) {
  SolverConfig c;
  c.rel_tol = c.abs_tol = tol;
  c.dense_grid = grid;
  return c;
}

}  // namespace

TEST(ModelSpec, DefaultShapes) {
  const auto s = ModelSpec::defaults(SystemKind::kSchrodinger, 50, 2);
  EXPECT_EQ(s.encoder_spec().input_dim, 50u);
  EXPECT_EQ(s.encoder_spec().output_dim, 4u);
  EXPECT_EQ(s.field_spec().input_dim, 3u);
  EXPECT_EQ(s.field_spec().output_dim, 2u);
  EXPECT_EQ(s.decoder_spec().output_dim, 1u);
  EXPECT_EQ(s.coder_activation, Activation::kRelu);

  const auto c = ModelSpec::defaults(SystemKind::kCopernicus, 50, 2);
  EXPECT_EQ(c.encoder_spec().input_dim, 2u);
  EXPECT_EQ(c.field_spec().input_dim, 2u);
  EXPECT_EQ(c.coder_hidden, (std::vector<std::size_t>{30, 30}));
  EXPECT_EQ(c.coder_activation, Activation::kTanh);

  const auto n2 = ModelSpec::defaults(SystemKind::kNewton, 100, 2, LatentMode::kSecondOrder);
  EXPECT_EQ(n2.field_spec().output_dim, 1u);
  EXPECT_EQ(n2.field_spec().input_dim, 3u);

  auto bad = n2;
  bad.latent_dim = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelParams, FlatRoundTrip) {
  const auto p = init_model(small_spec(SystemKind::kNewton, 20, 2), 5);
  ModelParams q(p.spec);
  q.assign(p.flat());
  EXPECT_EQ(q.flat(), p.flat());
  EXPECT_EQ(q.encoder.values(), p.encoder.values());
  EXPECT_THROW(q.assign(Vec::Zero(3)), ShapeError);
  EXPECT_EQ(init_model(p.spec, 5).flat(), p.flat());
  EXPECT_NE(init_model(p.spec, 6).flat(), p.flat());
}

TEST(Encode, ZeroEncoderGivesUnitSigma) {
  ModelParams p(small_spec(SystemKind::kSchrodinger, 10, 2));
  const auto e = encode(p, Vec::Ones(10));
  EXPECT_TRUE(e.mu.isZero(0.0));
  EXPECT_TRUE(e.sigma.isOnes(0.0));
}

TEST(Encode, SigmaPositiveAndDeterministic) {
  const auto p = init_model(small_spec(SystemKind::kSchrodinger, 10, 3), 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 3.0);
  Mat in(10, 1000);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = d(rng);
  const auto e = encode_batch(p, in);
  EXPECT_TRUE((e.sigma.array() > 0.0).all());
  const auto again = encode_batch(p, in);
  EXPECT_EQ(e.mu, again.mu);
  EXPECT_EQ(e.sigma, again.sigma);
  EXPECT_THROW(encode(p, Vec::Ones(9)), ShapeError);
}

TEST(SampleLatent, ReturnsMu) {
  Mat mu(2, 1);
  mu << 0.3, -1.0;
  EXPECT_EQ(sample_latent(mu, Mat::Constant(2, 1, 0.5)), mu);
  EXPECT_EQ(sample_latent(mu, Mat::Constant(2, 1, 7.0)), mu);
  EXPECT_THROW(sample_latent(mu, Mat::Ones(3, 1)), ShapeError);
}

TEST(LatentRhs, SecondOrderPairsVelocity) {
  const auto p = init_model(small_spec(SystemKind::kSchrodinger, 10, 4,
                                       LatentMode::kSecondOrder), 3);
  PotentialCoeffs v;
  v.c[2] = 0.4;
  const Control c = v;
  Vec h(4);
  h << 0.1, -0.7, 1.3, 0.25;
  const double x = 0.8;
  const Vec dh = latent_rhs(p, x, h, c);
  Vec in(5);
  in << h, v.value(x);
  const Vec g = forward(p.field, in);
  ASSERT_EQ(g.size(), 2);
  EXPECT_EQ(dh[0], h[1]);
  EXPECT_EQ(dh[1], g[0]);
  EXPECT_EQ(dh[2], h[3]);
  EXPECT_EQ(dh[3], g[1]);
}

TEST(LatentRhs, ZeroFieldFreezes) {
  ModelParams p(small_spec(SystemKind::kNewton, 10, 3));
  const Control c = 1.7;
  EXPECT_TRUE(latent_rhs(p, 0.3, Vec::Ones(3), c).isZero(0.0));
}

TEST(LatentRhs, CopernicusIsAutonomous) {
  const auto p = init_model(small_spec(SystemKind::kCopernicus, 50, 2), 8);
  const Control c = std::monostate{};
  Vec h(2);
  h << 0.4, -0.2;
  EXPECT_EQ(latent_rhs(p, 0.0, h, c), latent_rhs(p, 17.5, h, c));
}

TEST(LatentRhs, UsesPotentialAtCurrentPosition) {
  const auto p = init_model(small_spec(SystemKind::kSchrodinger, 10, 2), 3);
  PotentialCoeffs v;
  v.c[0] = 0.5;
  const Control c = v;
  const Vec h = Vec::Constant(2, 0.2);
  Vec in(3);
  in << h, v.value(1.1);
  EXPECT_EQ(latent_rhs(p, 1.1, h, c), forward(p.field, in));
}

TEST(Rollout, ZeroFieldGivesConstantReconstruction) {
  auto p = init_model(small_spec(SystemKind::kNewton, 10, 2), 2);
  p.field.values().setZero();
  const auto r = rollout(p, Vec::Constant(1, 1.5), Control{1.5},
                         tight(uniform_grid(0.0, 3.0, 10)));
  for (Eigen::Index i = 1; i < r.reconstructions.rows(); ++i) {
    EXPECT_EQ(r.reconstructions.row(i), r.reconstructions.row(0));
  }
  EXPECT_EQ(r.states.row(0).transpose(), r.mu);
}

TEST(Rollout, FirstReconstructionIgnoresSigma) {
  const auto spec = small_spec(SystemKind::kSchrodinger, 10, 2);
  auto p = init_model(spec, 2);
  const Vec in = Vec::LinSpaced(10, 0.0, 1.0);
  PotentialCoeffs v;
  const auto cfg = tight(uniform_grid(0.0, 1.0, 10));
  const auto a = rollout(p, in, v, cfg);
  // Perturb only the log-sigma rows of the encoder output layer.
  const std::size_t last = p.encoder.spec().layer_count() - 1;
  p.encoder.weight(last).bottomRows(2).array() += 0.7;
  p.encoder.bias(last).tail(2).array() -= 0.3;
  const auto b = rollout(p, in, v, cfg);
  EXPECT_NE(a.sigma, b.sigma);
  EXPECT_EQ(a.reconstructions.row(0), b.reconstructions.row(0));
  EXPECT_EQ(a.states, b.states);
}

TEST(Rollout, GridPrefixProperty) {
  const auto p = init_model(small_spec(SystemKind::kNewton, 20, 2), 9);
  const auto full_grid = uniform_grid(0.0, 4.0, 21);
  const std::vector<double> prefix(full_grid.begin(), full_grid.begin() + 11);
  SolverConfig cfg;
  cfg.dense_grid = full_grid;
  const auto full = rollout(p, Vec::Constant(1, 2.0), Control{2.0}, cfg);
  cfg.dense_grid = prefix;
  const auto part = rollout(p, Vec::Constant(1, 2.0), Control{2.0}, cfg);
  const double scale = std::max(1.0, full.states.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < part.states.rows(); ++i) {
    EXPECT_LT((part.states.row(i) - full.states.row(i)).cwiseAbs().maxCoeff(),
              10 * cfg.rel_tol * scale);
  }
}

TEST(Rollout, SecondOrderPositionDerivativeIsVelocity) {
  const auto p = init_model(small_spec(SystemKind::kNewton, 20, 2,
                                       LatentMode::kSecondOrder), 4);
  const auto grid = uniform_grid(0.0, 2.0, 401);
  const auto r = rollout(p, Vec::Constant(1, 1.3), Control{1.3}, tight(grid, 1e-11));
  const double dt = grid[1] - grid[0];
  for (Eigen::Index i = 1; i + 1 < r.states.rows(); ++i) {
    const double deriv = (r.states(i + 1, 0) - r.states(i - 1, 0)) / (2 * dt);
    EXPECT_NEAR(deriv, r.states(i, 1), 1e-4 * std::max(1.0, std::abs(r.states(i, 1))));
  }
}

TEST(Rollout, BatchMatchesSingleSamples) {
  const auto data = tiny_dataset(SystemKind::kSchrodinger, 3, 8, 2.0);
  const auto p = init_model(small_spec(SystemKind::kSchrodinger, 8, 2), 1);
  const auto batch = make_batch(data, {0, 1, 2});
  const BatchControl bc(SystemKind::kSchrodinger, batch.controls);
  const auto cfg = tight(data.spec.grid);
  const auto r = rollout_batch(p, batch, bc, cfg);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto one = rollout(p, batch.encoder_inputs.col(static_cast<Eigen::Index>(k)),
                             data.samples[k].control, cfg);
    for (std::size_t i = 0; i < data.spec.grid.size(); ++i) {
      const Mat lat = latent_states(r.trajectory, i, 2);
      const Vec want = one.states.row(static_cast<Eigen::Index>(i)).transpose();
      EXPECT_LT((lat.col(static_cast<Eigen::Index>(k)) - want).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

namespace {

// Central differences of the batch loss over every parameter, compared with
// the adjoint-based gradient, grouped by network.
void check_gradient(const ModelParams& p0, const Batch& batch, const TrainConfig& cfg,
                    const std::vector<double>& grid) {
  const auto lg = loss_and_gradient(p0, batch, cfg, grid);
  ModelParams p = p0;
  Vec x = p0.flat();
  const double step = 1e-5;
  Vec fd(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double keep = x[j];
    x[j] = keep + step;
    p.assign(x);
    const double lp = loss_and_gradient(p, batch, cfg, grid, false).loss.total;
    x[j] = keep - step;
    p.assign(x);
    const double lm = loss_and_gradient(p, batch, cfg, grid, false).loss.total;
    x[j] = keep;
    fd[j] = (lp - lm) / (2 * step);
  }
  const auto ne = static_cast<Eigen::Index>(p0.encoder.size());
  const auto nf = static_cast<Eigen::Index>(p0.field.size());
  const auto nd = static_cast<Eigen::Index>(p0.decoder.size());
  struct Group {
    const char* name;
    Eigen::Index start, len;
  };
  for (const Group& g : {Group{"encoder", 0, ne}, Group{"field", ne, nf},
                         Group{"decoder", ne + nf, nd}}) {
    const Vec want = fd.segment(g.start, g.len);
    const Vec got = lg.grad.segment(g.start, g.len);
    const double scale = want.cwiseAbs().maxCoeff();
    ASSERT_GT(scale, 0.0) << g.name;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < g.len; ++j) {
      worst = std::max(worst, std::abs(got[j] - want[j]) /
                                  std::max(std::abs(want[j]), 1e-3 * scale));
    }
    EXPECT_LT(worst, 1e-3) << g.name;
  }
}

}  // namespace

TEST(Gradient, MiniatureSchrodingerMatchesFiniteDifferences) {
  const auto data = tiny_dataset(SystemKind::kSchrodinger, 2, 5, 1.0);
  const auto p = init_model(small_spec(SystemKind::kSchrodinger, 5, 2), 3);
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kSchrodinger);
  cfg.beta = 0.05;
  cfg.rel_tol = cfg.abs_tol = 1e-11;
  check_gradient(p, make_batch(data, {0, 1}), cfg, data.spec.grid);
}

TEST(Gradient, MiniatureNewtonWithMreMatchesFiniteDifferences) {
  const auto data = tiny_dataset(SystemKind::kNewton, 2, 5, 2.0);
  const auto p = init_model(small_spec(SystemKind::kNewton, 5, 2), 7);
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kNewton);
  cfg.rel_tol = cfg.abs_tol = 1e-11;
  check_gradient(p, make_batch(data, {0, 1}), cfg, data.spec.grid);
}

TEST(Gradient, MiniatureSecondOrderPauliMatchesFiniteDifferences) {
  const auto data = tiny_dataset(SystemKind::kPauli, 2, 5, 1.0);
  const auto p = init_model(small_spec(SystemKind::kPauli, 5, 4, LatentMode::kSecondOrder), 2);
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kPauli, LatentMode::kSecondOrder);
  cfg.rel_tol = cfg.abs_tol = 1e-11;
  check_gradient(p, make_batch(data, {0, 1}), cfg, data.spec.grid);
}

TEST(Gradient, MiniatureCopernicusMatchesFiniteDifferences) {
  SystemSpec spec = SystemSpec::defaults(SystemKind::kCopernicus);
  spec.sample_count = 2;
  spec.grid = uniform_grid(0.0, 4.0, 5);
  const auto data = generate(spec);
  const auto p = init_model(small_spec(SystemKind::kCopernicus, 5, 2), 2);
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kCopernicus);
  cfg.rel_tol = cfg.abs_tol = 1e-11;
  check_gradient(p, make_batch(data, {0, 1}), cfg, data.spec.grid);
}
