#include <benchmark/benchmark.h>

#include "wiper/metrics.hpp"
#include "wiper/rng.hpp"

namespace {

using namespace wiper;

Tensor embeddings(SeededRng& rng, std::size_t f, std::size_t side, std::size_t d) {
  Tensor t({f, side, side, d});
  for (float& x : t.data()) x = static_cast<float>(rng.next_normal());
  return t;
}

// Args: frames, token grid side. D = 768 as for a ViT-B patch embedding.
void BM_TokSim(benchmark::State& state) {
  const auto f = static_cast<std::size_t>(state.range(0)), side = static_cast<std::size_t>(state.range(1));
  SeededRng rng(5);
  const EmbeddingVideo in(embeddings(rng, f, side, 768), 16), out(embeddings(rng, f, side, 768), 16);
  MaskGrid masks = MaskGrid::zeros(Resolution::kToken, {f, side, side});
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t y = side / 4; y < side / 2; ++y)
      for (std::size_t x = side / 4; x < side / 2; ++x) masks.set((k * side + y) * side + x, true);
  for (auto _ : state) benchmark::DoNotOptimize(toksim(in, out, masks));
}
BENCHMARK(BM_TokSim)->Args({8, 14})->Args({24, 32})->Unit(benchmark::kMillisecond);

void BM_BackgroundPsnr(benchmark::State& state) {
  const std::size_t f = 16, side = static_cast<std::size_t>(state.range(0));
  Tensor a({3, f, side, side}, 100.0f), b({3, f, side, side}, 104.0f);
  MaskGrid mask = MaskGrid::zeros(Resolution::kPixel, {f, side, side});
  for (std::size_t i = 0; i < mask.size(); i += 7) mask.set(i, true);
  for (auto _ : state) benchmark::DoNotOptimize(bg_psnr(a, b, mask));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(2 * a.size() * sizeof(float)));
}
BENCHMARK(BM_BackgroundPsnr)->Arg(128)->Arg(480)->Unit(benchmark::kMillisecond);

}  // namespace
