#include <benchmark/benchmark.h>

#include <memory>

#include "hints/dataset.hpp"
#include "hints/deeponet.hpp"
#include "hints/fem.hpp"
#include "hints/hints.hpp"
#include "hints/rng.hpp"
#include "hints/transfer.hpp"

using namespace hints;

namespace {

AssembledSystem darcy_system(int n) {
  auto mesh = std::make_shared<const TriMesh>(make_geometry(GeometryTag::LShape, n));
  return build_system(ProblemKind::Darcy, mesh, SampleGenerator(SamplingConfig{}).draw(1, 0));
}

DenseMatrix random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_GaussSeidelSweep(benchmark::State& state) {
  const AssembledSystem s = darcy_system(static_cast<int>(state.range(0)));
  Vector u(s.size(), 0.0);
  for (auto _ : state) {
    gauss_seidel_sweep(s.k, s.f, u);
    benchmark::DoNotOptimize(u.data());
  }
  state.counters["dofs"] = s.size();
}
BENCHMARK(BM_GaussSeidelSweep)->Arg(32)->Arg(64);

void BM_AssembleDarcy(benchmark::State& state) {
  const TriMesh m = make_geometry(GeometryTag::LShape, static_cast<int>(state.range(0)));
  const Vector k(m.node_count(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(assemble_darcy(m, k));
}
BENCHMARK(BM_AssembleDarcy)->Arg(32);

void BM_AssembleElasticity(benchmark::State& state) {
  const TriMesh m = make_geometry(GeometryTag::Square, static_cast<int>(state.range(0)));
  const Vector e(m.node_count(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(assemble_elasticity(m, e, 0.3));
}
BENCHMARK(BM_AssembleElasticity)->Arg(24);

void BM_DarcyForward(benchmark::State& state) {
  const DeepONetParams p = init_params(Arch::darcy(), 1);
  const DenseMatrix x = random_matrix(2 * kGridPoints, static_cast<int>(state.range(0)), 2);
  const TriMesh m = make_geometry(GeometryTag::LShape, 32);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, x, m.nodes));
}
BENCHMARK(BM_DarcyForward)->Arg(1)->Arg(64);

void BM_DarcyLossAndGradient(benchmark::State& state) {
  const DeepONetParams p = init_params(Arch::darcy(), 1);
  const int batch = static_cast<int>(state.range(0));
  const DenseMatrix x = random_matrix(2 * kGridPoints, batch, 3);
  const TriMesh m = make_geometry(GeometryTag::LShape, 32);
  const DenseMatrix y = random_matrix(batch, m.node_count(), 4);
  std::vector<double> grad(p.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(loss_and_gradient(p, x, m.nodes, y, grad));
  }
}
BENCHMARK(BM_DarcyLossAndGradient)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Ceod(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const DenseMatrix xs = random_matrix(n, 2 * kGridPoints, 5), xt = random_matrix(n, 2 * kGridPoints, 6);
  const DenseMatrix ys = random_matrix(n, 64, 7), yt = random_matrix(n, 64, 8);
  for (auto _ : state) benchmark::DoNotOptimize(ceod_loss(xs, ys, xt, yt, 1e-3, 0.1, 1e-3, true).loss);
}
BENCHMARK(BM_Ceod)->Arg(50);

}  // namespace
BENCHMARK_MAIN();
