#include <benchmark/benchmark.h>

#include <random>

#include "pengcde/dynamics.hpp"
#include "pengcde/equivariant.hpp"
#include "pengcde/graphgen.hpp"
#include "pengcde/model.hpp"
#include "pengcde/rng.hpp"
#include "pengcde/solver.hpp"

using namespace pengcde;

namespace {

Tensor random_square(std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

}  // namespace

static void BM_EquivApply(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor w = Tensor::full({kEquivBasisSize}, 0.1);
  Tensor a = random_square(n, 2);
  for (auto _ : state) {
    Tensor out = equiv_apply(w, a);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}
BENCHMARK(BM_EquivApply)->RangeMultiplier(2)->Range(64, 512)->Complexity();

static void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_square(n, 3);
  Tensor b = random_square(n, 4);
  for (auto _ : state) {
    Tensor out = matmul(a, b);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

static void BM_PengFieldEval(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  SeriesParams sp;
  sp.t_end = 1.0;
  sp.num_times = 8;
  sp.num_changes = 1;
  DynamicGraphSeries series = build_series(GraphKind::Community, n, 5, sp);
  ModelParams params = init_params(Variant::Peng, n, 16, 0, 1, 2, 5);
  ControlPaths paths = build_paths(series, false);
  Tensor z = Tensor::full({n, 16}, 0.1);
  const double t = 0.5;
  for (auto _ : state) {
    Tensor f = vector_field(params, t, z, paths);
    benchmark::DoNotOptimize(f.data());
  }
}
BENCHMARK(BM_PengFieldEval)->RangeMultiplier(2)->Range(64, 512);

static void BM_PremultFieldEval(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  SeriesParams sp;
  sp.t_end = 1.0;
  sp.num_times = 8;
  sp.num_changes = 1;
  DynamicGraphSeries series = build_series(GraphKind::Community, n, 6, sp);
  ModelParams params = init_params(Variant::PreMult, n, 16, 0, 1, 2, 6);
  ControlPaths paths = build_paths(series, false);
  Tensor z = Tensor::full({n, 16}, 0.1);
  for (auto _ : state) {
    Tensor f = vector_field(params, 0.5, z, paths);
    benchmark::DoNotOptimize(f.data());
  }
}
BENCHMARK(BM_PremultFieldEval)->RangeMultiplier(2)->Range(64, 256);

static void BM_Tsit5LinearSolve(benchmark::State& state) {
  VectorField decay = [](double, const Tensor& z) { return scale(z, -1.0); };
  Tensor z0 = Tensor::ones({16, 16});
  for (auto _ : state) {
    LatentPath path = tsit5_solve(decay, z0, 0.0, 1.0, {1.0}, 1e-6, 1e-8, 0.0);
    benchmark::DoNotOptimize(path.states.back().data());
  }
}
BENCHMARK(BM_Tsit5LinearSolve);

static void BM_HeatSimulate(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  SeriesParams sp;
  sp.t_end = 1.0;
  sp.num_times = 10;
  sp.num_changes = 2;
  DynamicGraphSeries series = build_series(GraphKind::Community, n, 7, sp);
  SystemSpec spec = default_system(SystemKind::Heat, n, 7);
  Tensor x0 = sample_x0(spec, n, 7);
  for (auto _ : state) {
    auto traj = simulate(spec, series, x0);
    benchmark::DoNotOptimize(traj.back().data());
  }
}
BENCHMARK(BM_HeatSimulate)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
