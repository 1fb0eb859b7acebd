#include <benchmark/benchmark.h>

#include "geoformer/backbone.hpp"
#include "geoformer/graph.hpp"
#include "geoformer/matrix.hpp"
#include "geoformer/model.hpp"
#include "geoformer/random.hpp"

using namespace geoformer;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

std::pair<Graph, SplitMasks> sbm(std::size_t n) {
  SyntheticParams p;
  p.block_sizes = {n / 2, n - n / 2};
  p.p_in = 8.0 / static_cast<double>(n);
  p.p_out = 1.0 / static_cast<double>(n);
  p.feature_dim = 64;
  return generate_synthetic(p, 0);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = random_matrix(rng, n, n);
  const Matrix b = random_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Spmm(benchmark::State& state) {
  const auto [g, masks] = sbm(static_cast<std::size_t>(state.range(0)));
  const NormalizedAdjacency adj = normalize_adjacency(g);
  Rng rng(2);
  const Matrix h = random_matrix(rng, g.num_nodes(), 64);
  for (auto _ : state) benchmark::DoNotOptimize(spmm(adj.matrix, h));
}
BENCHMARK(BM_Spmm)->Arg(1000)->Arg(4000);

void BM_LinearAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const AttentionInputs in{random_matrix(rng, n, 64), random_matrix(rng, n, 64), random_matrix(rng, n, 64), 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(linear_attention(in));
}
BENCHMARK(BM_LinearAttention)->Arg(1000)->Arg(4000);

// One training epoch (forward + backward + step) per iteration.
void BM_Epoch(benchmark::State& state) {
  const auto [g, masks] = sbm(1000);
  TrainConfig c;
  c.variant = static_cast<Variant>(state.range(0));
  c.epochs = 1;
  c.patience = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(c, g, masks));
  state.SetLabel(to_string(c.variant));
}
BENCHMARK(BM_Epoch)
    ->Arg(static_cast<int>(Variant::base))
    ->Arg(static_cast<int>(Variant::stiefel))
    ->Arg(static_cast<int>(Variant::rmoe))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
