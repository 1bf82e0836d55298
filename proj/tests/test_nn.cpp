#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phydisc/errors.hpp"
#include "phydisc/nn.hpp"

using namespace phydisc;

namespace {

// Per-element forward oracle, independent of the Eigen path.
Vec naive_forward(const MlpParams& p, const Vec& x) {
  const MlpSpec& spec = p.spec();
  std::vector<double> cur(x.data(), x.data() + x.size());
  const auto& values = p.values();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const LayerSlot& s = p.layout()[l];
    std::vector<double> next(s.fan_out, 0.0);
    for (std::size_t o = 0; o < s.fan_out; ++o) {
      double acc = values[static_cast<Eigen::Index>(s.bias_offset + o)];
      for (std::size_t i = 0; i < s.fan_in; ++i) {
        acc += values[static_cast<Eigen::Index>(s.weight_offset + i * s.fan_out + o)] * cur[i];
      }
      if (l + 1 < spec.layer_count()) {
        acc = spec.activation == Activation::kTanh ? std::tanh(acc)
                                                   : std::max(acc, 0.0);
      }
      next[o] = acc;
    }
    cur = std::move(next);
  }
  return Eigen::Map<Vec>(cur.data(), static_cast<Eigen::Index>(cur.size()));
}

MlpParams random_params(const MlpSpec& spec, std::uint64_t seed) {
  MlpParams p = init_kaiming(spec, seed);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> n(0.0, 0.3);
  // Non-zero biases so the bias path is exercised.
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    auto b = p.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = n(rng);
  }
  return p;
}

Vec random_vec(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

TEST(MlpSpec, ParamCountMatchesLayout) {
  MlpSpec spec{3, {5, 4}, 2, Activation::kTanh};
  EXPECT_EQ(spec.param_count(), (3 + 1) * 5 + (5 + 1) * 4 + (4 + 1) * 2);
  MlpParams p(spec);
  std::size_t prev_end = 0;
  for (const auto& slot : p.layout()) {
    EXPECT_EQ(slot.weight_offset, prev_end);
    EXPECT_EQ(slot.bias_offset, slot.weight_offset + slot.fan_in * slot.fan_out);
    prev_end = slot.bias_offset + slot.fan_out;
  }
  EXPECT_EQ(prev_end, p.size());
}

TEST(MlpSpec, RejectsInvalidShapes) {
  EXPECT_THROW((MlpParams(MlpSpec{0, {4}, 1})), ConfigError);
  EXPECT_THROW((MlpParams(MlpSpec{2, {}, 1})), ConfigError);
  EXPECT_THROW((MlpParams(MlpSpec{2, {4, 0}, 1})), ConfigError);
  EXPECT_THROW((MlpParams(MlpSpec{2, {4}, 1}, Vec::Zero(3))), ShapeError);
}

TEST(InitKaiming, DeterministicPerSeed) {
  MlpSpec spec{1, {2}, 1, Activation::kTanh};
  const auto a = init_kaiming(spec, 7);
  const auto b = init_kaiming(spec, 7);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), init_kaiming(spec, 8).values());
}

TEST(InitKaiming, BiasesAreZero) {
  for (auto act : {Activation::kTanh, Activation::kRelu}) {
    MlpSpec spec{7, {9, 5}, 3, act};
    const auto p = init_kaiming(spec, 3);
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      EXPECT_TRUE((p.bias(l).array() == 0.0).all());
    }
  }
}

TEST(InitKaiming, FirstLayerStdMatchesFanIn) {
  // 16 x 64 first layer, relu gain: target std sqrt(2/16). Pool draws over
  // seeds until 1e5 samples are collected.
  MlpSpec spec{16, {64}, 64, Activation::kRelu};
  std::vector<double> draws;
  for (std::uint64_t seed = 0; draws.size() < 100000; ++seed) {
    const auto w = init_kaiming(spec, seed).weight(0);
    draws.insert(draws.end(), w.data(), w.data() + w.size());
  }
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / static_cast<double>(draws.size() - 1));
  EXPECT_NEAR(sd, std::sqrt(2.0 / 16.0), 0.05 * std::sqrt(2.0 / 16.0));
}

TEST(Forward, ZeroWeightsGiveZero) {
  MlpParams p(MlpSpec{3, {4}, 2, Activation::kTanh});
  const Vec out = forward(p, Vec::Constant(3, 1.7));
  EXPECT_TRUE(out.isZero(0.0));
}

TEST(Forward, AffineOutputLayer) {
  // A unit-weight relu passes a positive input through, leaving w*x + b.
  MlpParams p(MlpSpec{1, {1}, 1, Activation::kRelu});
  p.weight(0)(0, 0) = 1.0;
  p.weight(1)(0, 0) = 2.5;
  p.bias(1)[0] = -0.75;
  EXPECT_DOUBLE_EQ(forward(p, Vec::Constant(1, 3.0))[0], 2.5 * 3.0 - 0.75);
}

TEST(Forward, MatchesNaiveOracle) {
  std::mt19937_64 rng(11);
  for (auto act : {Activation::kTanh, Activation::kRelu}) {
    MlpSpec spec{5, {7, 6}, 3, act};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = random_params(spec, seed);
      const Vec x = random_vec(5, rng);
      const Vec got = forward(p, x);
      const Vec want = naive_forward(p, x);
      for (Eigen::Index i = 0; i < got.size(); ++i) {
        EXPECT_NEAR(got[i], want[i], 1e-12);
      }
    }
  }
}

TEST(Forward, RejectsWrongInputLength) {
  MlpParams p(MlpSpec{3, {4}, 2});
  EXPECT_THROW(forward(p, Vec::Zero(2)), ShapeError);
}

TEST(Forward, BitIdenticalRepeats) {
  const auto p = random_params(MlpSpec{4, {8, 8}, 2, Activation::kTanh}, 5);
  Vec x(4);
  x << 0.1, -0.2, 0.3, 0.4;
  const Vec a = forward(p, x);
  const Vec b = forward(p, x);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * 2));
}

TEST(Vjp, ZeroCotangentGivesZero) {
  const auto p = random_params(MlpSpec{3, {5}, 2, Activation::kTanh}, 1);
  const auto r = vjp(p, Vec::Constant(3, 0.4), Vec::Zero(2));
  EXPECT_TRUE(r.grad_input.isZero(0.0));
  EXPECT_TRUE(r.grad_params.isZero(0.0));
}

TEST(Vjp, LinearNetAnalytic) {
  // relu hidden unit with weight 1 on positive input acts as identity, so the
  // network is x -> w*x + b on the output layer.
  MlpParams p(MlpSpec{1, {1}, 1, Activation::kRelu});
  p.weight(0)(0, 0) = 1.0;
  p.weight(1)(0, 0) = 1.8;
  p.bias(1)[0] = 0.3;
  const double x = 2.0;
  const auto r = vjp(p, Vec::Constant(1, x), Vec::Constant(1, 1.0));
  EXPECT_DOUBLE_EQ(r.grad_input[0], 1.8);
  const auto& out = p.layout()[1];
  EXPECT_DOUBLE_EQ(r.grad_params[static_cast<Eigen::Index>(out.weight_offset)], x);
  EXPECT_DOUBLE_EQ(r.grad_params[static_cast<Eigen::Index>(out.bias_offset)], 1.0);
}

TEST(Vjp, MatchesCentralFiniteDifferencesOn100Seeds) {
  const double step = 1e-5;
  for (auto act : {Activation::kTanh, Activation::kRelu}) {
    MlpSpec spec{3, {6, 5}, 2, act};
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const auto p = random_params(spec, seed);
      const Vec x = random_vec(3, rng);
      const Vec c = random_vec(2, rng);
      const auto r = vjp(p, x, c);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        const double fd =
            (c.dot(forward(p, xp)) - c.dot(forward(p, xm))) / (2 * step);
        EXPECT_LT(rel_err(r.grad_input[i], fd), 1e-4) << "seed " << seed;
      }
      for (Eigen::Index j = 0; j < p.values().size(); ++j) {
        MlpParams pp = p, pm = p;
        pp.values()[j] += step;
        pm.values()[j] -= step;
        const double fd =
            (c.dot(forward(pp, x)) - c.dot(forward(pm, x))) / (2 * step);
        EXPECT_LT(rel_err(r.grad_params[j], fd), 1e-4)
            << "seed " << seed << " param " << j;
      }
    }
  }
}

TEST(Vjp, LinearInCotangent) {
  const auto p = random_params(MlpSpec{4, {8}, 3, Activation::kTanh}, 9);
  std::mt19937_64 rng(3);
  const Vec x = random_vec(4, rng);
  const Vec u = random_vec(3, rng);
  const Vec v = random_vec(3, rng);
  const double a = 0.7, b = -1.3;
  const auto ru = vjp(p, x, u);
  const auto rv = vjp(p, x, v);
  const auto rc = vjp(p, x, a * u + b * v);
  EXPECT_LT((rc.grad_input - (a * ru.grad_input + b * rv.grad_input)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((rc.grad_params - (a * ru.grad_params + b * rv.grad_params)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Vjp, BatchSumsPerSampleGradients) {
  const auto p = random_params(MlpSpec{2, {5}, 2, Activation::kRelu}, 4);
  std::mt19937_64 rng(8);
  Mat x(2, 3), c(2, 3);
  for (int k = 0; k < 3; ++k) {
    x.col(k) = random_vec(2, rng);
    c.col(k) = random_vec(2, rng);
  }
  MlpTape tape;
  forward_batch(p, x, &tape);
  Vec gp = Vec::Zero(static_cast<Eigen::Index>(p.size()));
  Mat gi;
  vjp_batch(p, tape, c, &gi, gp);
  Vec sum = Vec::Zero(gp.size());
  for (int k = 0; k < 3; ++k) {
    const auto r = vjp(p, x.col(k), c.col(k));
    sum += r.grad_params;
    EXPECT_LT((gi.col(k) - r.grad_input).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LT((gp - sum).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Vjp, RejectsWrongCotangent) {
  const auto p = random_params(MlpSpec{2, {3}, 2}, 1);
  EXPECT_THROW(vjp(p, Vec::Zero(2), Vec::Zero(3)), ShapeError);
}
