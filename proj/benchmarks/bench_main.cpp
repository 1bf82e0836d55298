#include <benchmark/benchmark.h>

#include <numeric>

#include "phydisc/model.hpp"
#include "phydisc/nn.hpp"
#include "phydisc/odeint.hpp"
#include "phydisc/simulate.hpp"
#include "phydisc/train.hpp"

using namespace phydisc;

namespace {

MlpSpec field_spec() {
  MlpSpec s;
  s.input_dim = 3;
  s.hidden_dims = {16, 16};
  s.output_dim = 2;
  return s;
}

Mat random_batch(Eigen::Index rows, Eigen::Index cols) {
  std::srand(7);
  return Mat::Random(rows, cols);
}

class DecayField : public OdeField {
 public:
  std::size_t state_size() const override { return 1; }
  void rhs(double, const Vec& h, Vec& dh) const override { dh = -h; }
};

class MlpField : public OdeField {
 public:
  explicit MlpField(MlpParams p) : p_(std::move(p)) {}
  std::size_t state_size() const override { return p_.spec().output_dim; }
  void rhs(double, const Vec& h, Vec& dh) const override {
    Vec in(p_.spec().input_dim);
    in.setZero();
    in.head(h.size()) = h;
    dh = forward(p_, in);
  }

 private:
  MlpParams p_;
};

Dataset small_dataset(SystemKind system, std::size_t samples) {
  SystemSpec spec = SystemSpec::defaults(system);
  spec.sample_count = samples;
  spec.seed = 3;
  return generate(spec);
}

}  // namespace

static void BM_MlpForwardBatch(benchmark::State& state) {
  const MlpParams p = init_kaiming(field_spec(), 1);
  const Mat x = random_batch(3, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(p, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBatch)->Arg(1)->Arg(64)->Arg(256);

static void BM_MlpVjpBatch(benchmark::State& state) {
  const MlpParams p = init_kaiming(field_spec(), 1);
  const Mat x = random_batch(3, state.range(0));
  const Mat cot = random_batch(2, state.range(0));
  MlpTape tape;
  forward_batch(p, x, &tape);
  Vec grad = Vec::Zero(p.values().size());
  Mat gin;
  for (auto _ : state) {
    vjp_batch(p, tape, cot, &gin, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpVjpBatch)->Arg(1)->Arg(64)->Arg(256);

static void BM_Tsit5Decay(benchmark::State& state) {
  DecayField f;
  SolverConfig cfg;
  cfg.rel_tol = cfg.abs_tol = std::pow(10.0, -static_cast<double>(state.range(0)));
  cfg.dense_grid = uniform_grid(0.0, 1.0, 11);
  const Vec h0 = Vec::Ones(1);
  for (auto _ : state) benchmark::DoNotOptimize(integrate(f, h0, cfg));
}
BENCHMARK(BM_Tsit5Decay)->Arg(6)->Arg(10);

static void BM_Tsit5MlpField(benchmark::State& state) {
  MlpField f(init_kaiming(field_spec(), 2));
  SolverConfig cfg;
  cfg.dense_grid = uniform_grid(0.0, 5.0, 50);
  const Vec h0 = Vec::Constant(2, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(integrate(f, h0, cfg));
}
BENCHMARK(BM_Tsit5MlpField);

static void BM_LossAndGradient(benchmark::State& state) {
  const Dataset data = small_dataset(SystemKind::kSchrodinger, 64);
  const ModelSpec spec = ModelSpec::defaults(SystemKind::kSchrodinger, data.grid_size(), 2);
  const ModelParams params = init_model(spec, 5);
  std::vector<std::size_t> rows(64);
  std::iota(rows.begin(), rows.end(), 0);
  const Batch batch = make_batch(data, rows);
  const TrainConfig cfg = TrainConfig::defaults(SystemKind::kSchrodinger);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_gradient(params, batch, cfg, data.spec.grid));
  }
}
BENCHMARK(BM_LossAndGradient)->Unit(benchmark::kMillisecond);

static void BM_GeneratePauli(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(small_dataset(SystemKind::kPauli, 16));
}
BENCHMARK(BM_GeneratePauli)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
