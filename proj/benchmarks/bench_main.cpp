#include <benchmark/benchmark.h>

#include "btc/diagnostics.hpp"
#include "btc/lindblad.hpp"
#include "btc/lindblad_generator.hpp"

namespace {

using namespace btc;

SpinModelParams btc_params(int N) { return SpinModelParams{N, -1.0, 0.0, -0.25, 0.1}; }

DensityMatrix start_state(int N) {
  return DensityMatrix::from_pure(ground_state(build_model(SpinModelParams{N, 0.0, 0.0, -0.25, 0.1}).H));
}

template <class Real>
void BM_GeneratorApply(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0));
  const OperatorSet ops = build_model(btc_params(N));
  const LindbladGenerator<Real> gen(ops.H, ops.L);
  const typename LindbladGenerator<Real>::State rho = start_state(N).matrix().template cast<std::complex<Real>>();
  typename LindbladGenerator<Real>::State out(ops.dim, ops.dim);
  for (auto _ : state) {
    gen.apply(rho, Real(0), out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GeneratorApply<double>)->Arg(50)->Arg(100)->Arg(250);
BENCHMARK(BM_GeneratorApply<xreal>)->Arg(50)->Arg(100);

void BM_DenseRhs(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0));
  const OperatorSet ops = build_model(btc_params(N));
  const Matrix rho = start_state(N).matrix();
  for (auto _ : state) benchmark::DoNotOptimize(lindblad_rhs(rho, ops.H, ops.L));
}
BENCHMARK(BM_DenseRhs)->Arg(50)->Arg(100);

// 100 RK4 steps of the quench
void BM_QuenchSteps(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0));
  const DensityMatrix rho0 = start_state(N);
  EvolutionOptions opt;
  opt.sample_stride = 1000;
  for (auto _ : state) benchmark::DoNotOptimize(evolve_quench(rho0, btc_params(N), 0.1, opt).final_state);
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_QuenchSteps)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_UhlmannFidelity(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0));
  const DensityMatrix rho = start_state(N);
  EvolutionOptions opt;
  const DensityMatrix sigma = evolve_quench(rho, btc_params(N), 1.0, opt).final_state;
  for (auto _ : state) benchmark::DoNotOptimize(uhlmann_fidelity(sigma, sigma));
}
BENCHMARK(BM_UhlmannFidelity)->Arg(50)->Arg(100)->Unit(benchmark::kMicrosecond);

void BM_PureOverlap(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0));
  const PureState psi = ground_state(build_model(btc_params(N)).H);
  const DensityMatrix rho = start_state(N);
  for (auto _ : state) benchmark::DoNotOptimize(pure_overlap(psi, rho));
}
BENCHMARK(BM_PureOverlap)->Arg(100)->Arg(250);

}  // namespace

BENCHMARK_MAIN();
