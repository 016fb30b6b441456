#include <benchmark/benchmark.h>

#include "wiper/localizer.hpp"
#include "wiper/rng.hpp"

namespace {

using namespace wiper;

void BM_OtsuThreshold(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  SeededRng rng(3);
  Tensor v({4, side, side});
  for (float& x : v.data()) x = static_cast<float>(rng.next_uniform());
  for (auto _ : state) benchmark::DoNotOptimize(otsu_threshold(v));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(v.size()));
}
BENCHMARK(BM_OtsuThreshold)->Arg(8)->Arg(32)->Arg(128);

void BM_ResponseMap(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  SeededRng rng(4);
  Matrix a(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    double sum = 0.0;
    for (float& x : a.row(r)) sum += x = static_cast<float>(rng.next_uniform() + 1e-3);
    for (float& x : a.row(r)) x = static_cast<float>(x / sum);
  }
  MaskGrid proposal = MaskGrid::zeros(Resolution::kToken, {1, 1, n});
  for (std::size_t p = 0; p < n; p += 5) proposal.set(p, true);
  for (auto _ : state) benchmark::DoNotOptimize(response_map(a, proposal));
}
BENCHMARK(BM_ResponseMap)->Arg(48)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

}  // namespace
