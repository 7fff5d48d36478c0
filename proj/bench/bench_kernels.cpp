#include "fusiontrack/fusion.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace fusiontrack;
using fusion::Matrix;

namespace {

struct Scene {
  nn::ParamStore store;
  fusion::DirectionParams params;
  Matrix center_pos, center_feat, neighbor_pos, neighbor_feat;

  Scene(int centers, int neighbors, int channels) {
    params = fusion::add_direction_params(store, "bench", channels, 3);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(0.0, 32.0), val(-1.0, 1.0);
    auto fill = [&](Matrix& m, int r, int c, auto& d) {
      m.resize(r, c);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = d(rng);
    };
    fill(center_pos, centers, 2, pos);
    fill(neighbor_pos, neighbors, 2, pos);
    fill(center_feat, centers, channels, val);
    fill(neighbor_feat, neighbors, channels, val);
  }
};

void BM_GroupAllReference(benchmark::State& state) {
  const Scene s(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)), 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(fusion::reference::group_all(s.center_pos, s.neighbor_pos, 8, 4.0));
}

void BM_GroupAllGrid(benchmark::State& state) {
  const Scene s(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)), 16);
  for (auto _ : state) benchmark::DoNotOptimize(fusion::group_all(s.center_pos, s.neighbor_pos, 8, 4.0));
}

void BM_InteractReference(benchmark::State& state) {
  const Scene s(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)), 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(fusion::reference::interact(s.store, s.params, s.center_pos, s.center_feat,
                                                         s.neighbor_pos, s.neighbor_feat, 8, 4.0));
}

void BM_InteractBatched(benchmark::State& state) {
  const Scene s(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)), 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(fusion::interact(s.store, s.params, s.center_pos, s.center_feat, s.neighbor_pos,
                                              s.neighbor_feat, 8, 4.0));
}

}  // namespace

BENCHMARK(BM_GroupAllReference)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_GroupAllGrid)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_InteractReference)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_InteractBatched)->Arg(64)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
