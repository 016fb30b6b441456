#include <benchmark/benchmark.h>

#include "wiper/flow_editor.hpp"
#include "wiper/toy_scene.hpp"

namespace {

using namespace wiper;

// One conditional toy-field evaluation at the default scene size.
void BM_ToyFieldEvaluate(benchmark::State& state) {
  const ToyScene scene = make_toy_scene();
  const ToyField field = scene.make_field();
  for (auto _ : state) benchmark::DoNotOptimize(field.evaluate(scene.latent, 0.5, Guidance::kConditional, nullptr));
}
BENCHMARK(BM_ToyFieldEvaluate)->Unit(benchmark::kMicrosecond);

// Full inversion with caching and adaptive masks; the arg is total_steps.
void BM_Invert(benchmark::State& state) {
  const ToyScene scene = make_toy_scene();
  const ToyField field = scene.make_field();
  ScheduleConfig c;
  c.total_steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(invert(scene.latent, field, c, scene.object_tokens, scene.effect_tokens));
  state.counters["steps/s"] =
      benchmark::Counter(static_cast<double>(state.iterations() * state.range(0)), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Invert)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
