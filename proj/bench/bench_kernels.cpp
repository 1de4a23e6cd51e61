// Serial reference kernels against their OpenMP counterparts.
// Run with OMP_NUM_THREADS set to the number of cores to compare.

#include <benchmark/benchmark.h>

#include "gridflow/datagen.hpp"
#include "gridflow/oracle.hpp"
#include "gridflow/train.hpp"

#include <map>
#include <memory>

using namespace gridflow;

namespace {

struct Fixture {
  Dataset dataset;
  SolutionSet solutions;
  train::Problem problem;
  nn::Params params;
  std::vector<int> batch;

  explicit Fixture(int nodes) {
    Network net = synth_network(7, nodes, 2.0);
    auto snaps = synth_series(7, net, 256);
    dataset = make_dataset(std::move(net), std::move(snaps), 7);
    solutions.solutions = solve_batch(dataset.network, dataset.snapshots);
    for (const Snapshot& s : dataset.snapshots) solutions.steps.push_back(s.step);
    problem = train::make_problem(dataset, solutions, nn::ModelConfig{}, 1e-7, dataset.train);
    params = nn::init_params(7, problem.model, problem.structure.num_nodes, problem.structure.num_links);
    for (int i = 0; i < 32; ++i) batch.push_back(i);
  }
};

Fixture& fixture(int nodes) {
  static std::map<int, std::unique_ptr<Fixture>> cache;
  auto& f = cache[nodes];
  if (!f) f = std::make_unique<Fixture>(nodes);
  return *f;
}

void BM_SolveBatchSerial(benchmark::State& st) {
  Fixture& f = fixture(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(solve_batch_serial(f.dataset.network, f.dataset.snapshots));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.dataset.snapshots.size()));
}

void BM_SolveBatchOpenMP(benchmark::State& st) {
  Fixture& f = fixture(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(solve_batch(f.dataset.network, f.dataset.snapshots));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.dataset.snapshots.size()));
}

void BM_BatchGradientSerial(benchmark::State& st) {
  Fixture& f = fixture(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(train::batch_gradient_serial(f.problem, f.params, f.batch));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.batch.size()));
}

void BM_BatchGradientOpenMP(benchmark::State& st) {
  Fixture& f = fixture(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(train::batch_gradient(f.problem, f.params, f.batch));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(f.batch.size()));
}

}  // namespace

BENCHMARK(BM_SolveBatchSerial)->Arg(10)->Arg(33)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SolveBatchOpenMP)->Arg(10)->Arg(33)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientSerial)->Arg(10)->Arg(33)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradientOpenMP)->Arg(10)->Arg(33)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
