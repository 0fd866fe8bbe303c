// Serial vs OpenMP timings of the parallel kernels. The second argument of
// each benchmark selects the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fpna/attacks.hpp"
#include "fpna/lab.hpp"
#include "fpna/ordered.hpp"
#include "fpna/schedsim.hpp"

namespace {

using namespace fpna;

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::Parallel : Exec::Serial; }

void label(benchmark::State& state) { state.SetLabel(state.range(1) ? "parallel" : "serial"); }

void BM_CyclicDotOutcomes(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto n = lab::boundary_normal(d);
  const auto x = lab::sample_boundary_point(n, 8388608.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cyclic_dot_outcomes(n, x, Precision::Binary64, exec_of(state)));
  label(state);
}
BENCHMARK(BM_CyclicDotOutcomes)->ArgsProduct({{1000, 4000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_EnumerateOrders(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  std::vector<double> stream(d);
  for (double& v : stream) v = u(rng);
  EnumerateOptions opt;
  opt.exec = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(enumerate_order_outcomes(stream, Precision::Binary16, opt));
  label(state);
}
BENCHMARK(BM_EnumerateOrders)->ArgsProduct({{7, 8}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_TauDistribution(benchmark::State& state) {
  const auto blocks = static_cast<std::size_t>(state.range(0));
  const sched::DeviceConfig device;
  const auto load = sched::WorkloadSpec::dgemm(7000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        sched::tau_distribution(device, load, load, blocks, 50, 1, sched::independent_stream(1), exec_of(state)));
  }
  label(state);
}
BENCHMARK(BM_TauDistribution)->ArgsProduct({{1024, 4096}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_EwaObjective(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto model = lab::ewa_designed_model(d, 40.5);
  const Graph x{Matrix(1, d, 1.0), {}, {}};
  attack::EwaConfig cfg;
  cfg.trials_per_eval = 200;
  cfg.max_blocks = d;
  cfg.exec = exec_of(state);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        attack::ewa_objective(model, x, 0, 1, sched::DeviceConfig{}, cfg, 7500, Precision::Binary32, 9));
  }
  label(state);
}
BENCHMARK(BM_EwaObjective)->ArgsProduct({{256, 1024}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_BoundarySpread(benchmark::State& state) {
  lab::BoundarySpreadConfig cfg;
  cfg.dim = static_cast<std::size_t>(state.range(0));
  cfg.n_points = 100;
  cfg.write_outcomes = false;
  cfg.exec = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(lab::run_boundary_spread(cfg));
  label(state);
}
BENCHMARK(BM_BoundarySpread)->ArgsProduct({{1000}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
