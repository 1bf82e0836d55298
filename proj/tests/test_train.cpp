#include <gtest/gtest.h>

#include <cmath>

#include "phydisc/errors.hpp"
#include "phydisc/optimizers.hpp"
#include "phydisc/train.hpp"

using namespace phydisc;

namespace {

std::vector<Mat> series(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<Mat> out;
  for (const auto& r : rows) {
    Mat m(1, static_cast<Eigen::Index>(r.size()));
    Eigen::Index j = 0;
    for (double v : r) m(0, j++) = v;
    out.push_back(m);
  }
  return out;
}

Dataset newton_mini(std::size_t samples, std::size_t grid_points, std::uint64_t seed = 1) {
  SystemSpec spec = SystemSpec::defaults(SystemKind::kNewton);
  spec.sample_count = samples;
  spec.grid = uniform_grid(0.0, 10.0, grid_points);
  spec.seed = seed;
  return generate(spec);
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kNewton);
  cfg.set_epochs(epochs);
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Loss, ReconstructionHandValues) {
  EXPECT_EQ(reconstruction_loss(series({{1.0}, {2.0}}), series({{0.0}, {0.0}})), 2.5);
  const auto x = series({{0.3, -1.2}, {2.0, 0.5}});
  EXPECT_EQ(reconstruction_loss(x, x), 0.0);
  EXPECT_THROW(reconstruction_loss(series({{1.0}}), series({{1.0}, {2.0}})), ShapeError);
}

TEST(Loss, ReconstructionInvariantToDuplicatedBatch) {
  const auto x = series({{1.0, -0.5}, {2.0, 0.25}, {0.0, 3.0}});
  const auto y = series({{0.5, 0.0}, {1.0, 1.0}, {-1.0, 2.5}});
  auto dup = [](const std::vector<Mat>& s) {
    std::vector<Mat> out;
    for (const Mat& m : s) {
      Mat d(m.rows(), 2 * m.cols());
      d << m, m;
      out.push_back(d);
    }
    return out;
  };
  // Hand sums: squared errors 0.25 + 0.25 + 1 + 0.5625 + 1 + 0.25 = 3.3125 over 6.
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, y), 3.3125 / 6.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss(dup(x), dup(y)), 3.3125 / 6.0);
}

TEST(Loss, KlHandValues) {
  EXPECT_NEAR(kl_divergence(Mat::Zero(1, 1), Mat::Ones(1, 1), 0.1), 50.0, 1e-12);
  EXPECT_NEAR(kl_divergence(Mat::Zero(1, 1), Mat::Constant(1, 1, 0.1), 0.1),
              0.5 * (1.0 + std::log(100.0)), 1e-12);
  EXPECT_NEAR(kl_divergence(Mat::Zero(1, 1), Mat::Constant(1, 1, 0.1), 0.1), 2.80259,
              1e-5);
  EXPECT_THROW(kl_divergence(Mat::Zero(1, 1), Mat::Zero(1, 1), 0.1), ShapeError);
}

TEST(Loss, KlDecreasesWithSmallerMean) {
  const Mat sigma = Mat::Constant(2, 1, 0.3);
  double prev = kl_divergence(Mat::Constant(2, 1, 2.0), sigma, 0.1);
  for (double m = 1.9; m >= 0.0; m -= 0.1) {
    const double cur = kl_divergence(Mat::Constant(2, 1, m), sigma, 0.1);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Loss, KlIsBatchMean) {
  Mat mu(1, 2), sigma(1, 2);
  mu << 0.0, 0.0;
  sigma << 1.0, 0.1;
  EXPECT_NEAR(kl_divergence(mu, sigma, 0.1), 0.5 * (50.0 + 2.802585092994046), 1e-12);
}

TEST(Loss, MreHandValues) {
  const auto x = series({{2.0}});
  EXPECT_EQ(mre_regularizer(x, x), 0.0);
  EXPECT_NEAR(mre_regularizer(x, series({{1.0}})), 0.5, 1e-8);
  EXPECT_TRUE(std::isfinite(mre_regularizer(series({{0.0}}), series({{1.0}}))));
}

TEST(Loss, ZeroBetaRemovesKlFromGradient) {
  const auto data = newton_mini(4, 6);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 6, 2), 1);
  const auto batch = make_batch(data, {0, 1, 2, 3});
  TrainConfig a = quick_config(0);
  a.beta = 0.0;
  TrainConfig b = a;
  b.sigma_h = 0.37;  // changes the KL value but must not touch the gradient
  const auto ga = loss_and_gradient(p, batch, a, data.spec.grid);
  const auto gb = loss_and_gradient(p, batch, b, data.spec.grid);
  EXPECT_NE(ga.loss.kl, gb.loss.kl);
  EXPECT_EQ(ga.grad, gb.grad);
  EXPECT_EQ(ga.loss.total, gb.loss.total);
}

TEST(Loss, DecompositionIdentity) {
  const auto data = newton_mini(4, 6);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 6, 2), 1);
  TrainConfig cfg = quick_config(0);
  cfg.beta = 0.25;
  const auto lg = loss_and_gradient(p, make_batch(data, {0, 1, 2, 3}), cfg, data.spec.grid);
  EXPECT_DOUBLE_EQ(lg.loss.total, lg.loss.reconstruction + 0.25 * lg.loss.kl + lg.loss.mre);
  EXPECT_EQ(lg.grad_hash, hash_vector(lg.grad));
}

TEST(Schedule, DefaultSplit) {
  const auto s = default_schedule(2200);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].optimizer, OptimizerKind::kRmsProp);
  EXPECT_EQ(s[0].epochs, 990u);
  EXPECT_EQ(s[1].epochs, 990u);
  EXPECT_EQ(s[2].optimizer, OptimizerKind::kBfgs);
  EXPECT_EQ(s[2].epochs, 220u);
  for (std::size_t n : {0u, 1u, 7u, 550u, 1601u}) {
    const auto t = default_schedule(n);
    EXPECT_EQ(t[0].epochs + t[1].epochs + t[2].epochs, n);
  }
}

TEST(Schedule, LearningRateDecaysGeometrically) {
  TrainConfig cfg = TrainConfig::defaults(SystemKind::kCopernicus);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 0.01);
  EXPECT_NEAR(learning_rate(cfg, 2699), 0.0001, 1e-15);
  EXPECT_NEAR(learning_rate(cfg, 1349) * learning_rate(cfg, 1350), 0.01 * 0.0001, 1e-9);
}

TEST(TrainConfig, TableDefaults) {
  const auto c = TrainConfig::defaults(SystemKind::kCopernicus);
  EXPECT_EQ(c.epochs(), 3000u);
  EXPECT_EQ(c.beta, 0.01);
  EXPECT_EQ(c.lr_end, 0.0001);
  const auto n = TrainConfig::defaults(SystemKind::kNewton);
  EXPECT_EQ(n.epochs(), 2200u);
  EXPECT_EQ(n.beta, 0.0);
  EXPECT_EQ(n.mre_weight, 1.0);
  const auto s = TrainConfig::defaults(SystemKind::kSchrodinger);
  EXPECT_EQ(s.epochs(), 1600u);
  EXPECT_EQ(s.beta, 0.001);
  EXPECT_EQ(s.mre_weight, 0.0);
  const auto p = TrainConfig::defaults(SystemKind::kPauli);
  EXPECT_EQ(p.epochs(), 2000u);
  EXPECT_EQ(p.beta, 0.0001);
  const auto p2 = TrainConfig::defaults(SystemKind::kPauli, LatentMode::kSecondOrder);
  EXPECT_EQ(p2.epochs(), 1400u);
  EXPECT_EQ(p2.beta, 0.1);
  EXPECT_EQ(p2.batch_size, 64u);
  EXPECT_EQ(p2.sigma_h, 0.1);
  TrainConfig bad = s;
  bad.lr_end = 0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Optimizers, RmsPropWithVanishingRateKeepsParameters) {
  Vec x = Vec::LinSpaced(5, -1.0, 1.0);
  const Vec before = x;
  RmsProp opt;
  opt.step(x, Vec::Constant(5, 3.0), 1e-300);
  EXPECT_LT((x - before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Optimizers, AdamFirstStepHasLearningRateSize) {
  Vec x = Vec::Zero(3);
  Adam opt;
  Vec g(3);
  g << 2.0, -0.5, 1e-3;
  opt.step(x, g, 0.01);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(std::abs(x[i]), 0.01, 1e-6);
}

TEST(Optimizers, LbfgsSolvesRosenbrock) {
  const Objective rosen = [](const Vec& x, Vec& g) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Vec x0(2);
  x0 << -1.2, 1.0;
  LbfgsOptions opts;
  opts.max_iterations = 200;
  const auto r = lbfgs_minimize(rosen, x0, opts);
  EXPECT_NEAR(r.x[0], 1.0, 1e-5);
  EXPECT_NEAR(r.x[1], 1.0, 1e-5);
  EXPECT_LT(r.f, 1e-10);
}

TEST(Optimizers, LbfgsBacksOffFromUndefinedRegion) {
  // f = (x - 2)^2 only defined for x < 2.5; the first unit step lands outside.
  const Objective f = [](const Vec& x, Vec& g) {
    g.resize(1);
    if (x[0] >= 2.5) return std::numeric_limits<double>::infinity();
    g[0] = 2.0 * (x[0] - 2.0);
    return (x[0] - 2.0) * (x[0] - 2.0);
  };
  LbfgsOptions opts;
  opts.max_iterations = 50;
  const auto r = lbfgs_minimize(f, Vec::Constant(1, -40.0), opts);
  EXPECT_NEAR(r.x[0], 2.0, 1e-6);
}

TEST(Optimizers, LbfgsKeepsBestPointOnLineSearchFailure) {
  // Gradient points the wrong way, so no step can decrease f.
  const Objective f = [](const Vec& x, Vec& g) {
    g = -2.0 * x;
    return x.squaredNorm();
  };
  Vec x0(1);
  x0 << 1.0;
  const auto r = lbfgs_minimize(f, x0, {});
  EXPECT_EQ(r.stop_reason, "line search failed");
  EXPECT_EQ(r.x, x0);
  EXPECT_EQ(r.f, 1.0);
}

TEST(Fit, ZeroEpochsReturnsInitialParams) {
  const auto data = newton_mini(5, 10);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 10, 2), 2);
  const auto r = fit(p, data, quick_config(0));
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.params.flat(), p.flat());
}

TEST(Fit, DeterministicHistoriesAndGradientHashes) {
  const auto data = newton_mini(10, 10);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 10, 2), 2);
  TrainConfig cfg = quick_config(20);
  cfg.batch_size = 4;
  const auto a = fit(p, data, cfg);
  const auto b = fit(p, data, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  ASSERT_FALSE(a.history.empty());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    const auto& ra = a.history[i];
    const auto& rb = b.history[i];
    EXPECT_EQ(ra.epoch, rb.epoch);
    EXPECT_EQ(ra.loss.total, rb.loss.total);
    EXPECT_EQ(ra.loss.reconstruction, rb.loss.reconstruction);
    EXPECT_EQ(ra.grad_hash_computed, rb.grad_hash_computed);
    EXPECT_EQ(ra.grad_hash_computed, ra.grad_hash_applied) << "epoch " << ra.epoch;
    EXPECT_DOUBLE_EQ(ra.loss.total, ra.loss.reconstruction + cfg.beta * ra.loss.kl +
                                        cfg.mre_weight * ra.loss.mre);
  }
  EXPECT_EQ(a.params.flat(), b.params.flat());
  EXPECT_EQ(a.history.front().optimizer, OptimizerKind::kRmsProp);
  EXPECT_EQ(a.history.back().optimizer, OptimizerKind::kBfgs);
}

TEST(Fit, ResumeContinuesEpochNumbering) {
  const auto data = newton_mini(6, 10);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 10, 2), 2);
  TrainConfig cfg = quick_config(20);
  FitOptions opts;
  opts.start_epoch = 12;
  const auto r = fit(p, data, cfg, opts);
  ASSERT_FALSE(r.history.empty());
  EXPECT_EQ(r.history.front().epoch, 12u);
  EXPECT_EQ(r.history.front().optimizer, OptimizerKind::kAdam);
}

TEST(Fit, NonFiniteLossAborts) {
  auto data = newton_mini(4, 10);
  data.samples[2].observations(3, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 10, 2), 2);
  try {
    fit(p, data, quick_config(5));
    FAIL() << "expected TrainingAbort";
  } catch (const TrainingAbort& e) {
    EXPECT_EQ(e.epoch(), 0u);
  }
}

TEST(Fit, RejectsMismatchedSystem) {
  const auto data = newton_mini(4, 10);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kSchrodinger, 10, 2), 2);
  EXPECT_THROW(fit(p, data, quick_config(2)), ConfigError);
}

TEST(Fit, MiniatureNewtonLossDropsTenfold) {
  const auto data = newton_mini(20, 20, 5);
  const auto p = init_model(ModelSpec::defaults(SystemKind::kNewton, 20, 2), 5);
  TrainConfig cfg = quick_config(200);
  std::vector<std::size_t> rows(20);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const double initial = evaluate_loss(p, data, rows, cfg).total;
  const auto r = fit(p, data, cfg);
  const double final_loss = evaluate_loss(r.params, data, rows, cfg).total;
  RecordProperty("initial_loss", std::to_string(initial));
  RecordProperty("final_loss", std::to_string(final_loss));
  EXPECT_LT(final_loss, 0.1 * initial) << initial << " -> " << final_loss;
}
