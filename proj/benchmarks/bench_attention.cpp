#include <benchmark/benchmark.h>

#include "wiper/attention.hpp"
#include "wiper/parallel.hpp"

namespace {

using namespace wiper;

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.next_normal());
  return m;
}

// Args: visual tokens, worker threads. Text tokens and width stay at the toy field's 6 x 16.
void BM_JointAttention(benchmark::State& state) {
  const auto ni = static_cast<std::size_t>(state.range(0));
  set_thread_limit(static_cast<std::size_t>(state.range(1)));
  SeededRng rng(1);
  const Matrix tq = gaussian_matrix(rng, 6, 16), tk = gaussian_matrix(rng, 6, 16);
  const Matrix vq = gaussian_matrix(rng, ni, 16), vk = gaussian_matrix(rng, ni, 16);
  for (auto _ : state) benchmark::DoNotOptimize(joint_attention(tq, tk, vq, vk));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>((ni + 6) * (ni + 6)));
  set_thread_limit(1);
}
BENCHMARK(BM_JointAttention)->ArgsProduct({{48, 256, 1024}, {1, 4}})->UseRealTime()->Unit(benchmark::kMicrosecond);

void BM_VisualRowsWithKeyScaling(benchmark::State& state) {
  const auto ni = static_cast<std::size_t>(state.range(0));
  SeededRng rng(2);
  const Matrix tk = gaussian_matrix(rng, 6, 16);
  const Matrix vq = gaussian_matrix(rng, ni, 16), vk = gaussian_matrix(rng, ni, 16);
  KeyScaling s{std::vector<std::uint8_t>(ni, 0), 0.8f, 1.2f};
  for (std::size_t p = 0; p < ni; p += 4) s.object[p] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(visual_attention_rows(vq, tk, vk, &s));
}
BENCHMARK(BM_VisualRowsWithKeyScaling)->Arg(48)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

}  // namespace
