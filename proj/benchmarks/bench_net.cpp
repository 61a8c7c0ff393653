#include <benchmark/benchmark.h>

#include "asfp/bench.hpp"
#include "asfp/model.hpp"
#include "asfp/prune.hpp"
#include "asfp/random.hpp"

namespace {

asfp::Tensor<float> random_batch(const asfp::Model<float>& model, int batch) {
  asfp::Tensor<float> x(
      {batch, model.arch.input[0], model.arch.input[1], model.arch.input[2]});
  asfp::Rng rng(99);
  rng.fill_normal(x, 0.0, 1.0);
  return x;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  asfp::Tensor<float> input({8, width, 16, 16});
  asfp::Tensor<float> weight({width, width, 3, 3});
  asfp::Rng rng(1);
  rng.fill_normal(input, 0.0, 1.0);
  rng.fill_normal(weight, 0.0, 0.1);
  for (auto _ : state) {
    asfp::Tensor<float> out = asfp::conv2d(input, weight, 1, 1);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 8LL * width * width * 9 * 16 * 16);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_ResNet56Forward(benchmark::State& state) {
  const asfp::Model<float> model =
      asfp::build_resnet<float>(9, {16, 32, 64}, {3, 32, 32}, 10, 1);
  const asfp::Tensor<float> x = random_batch(model, 16);
  for (auto _ : state) {
    asfp::Tensor<float> logits = asfp::forward_eval(model, x);
    benchmark::DoNotOptimize(logits.data());
  }
}
BENCHMARK(BM_ResNet56Forward);

void BM_ResNet56ForwardPruned40(benchmark::State& state) {
  asfp::Model<float> model = asfp::build_resnet<float>(9, {16, 32, 64}, {3, 32, 32}, 10, 1);
  asfp::PruneConfig cfg;
  cfg.mode = asfp::PruneMode::hard;
  cfg.goal_rate = 0.4;
  cfg.epoch_max = 1;
  const asfp::Model<float> compact = asfp::hard_prune(model, cfg);
  const asfp::Tensor<float> x = random_batch(compact, 16);
  for (auto _ : state) {
    asfp::Tensor<float> logits = asfp::forward_eval(compact, x);
    benchmark::DoNotOptimize(logits.data());
  }
}
BENCHMARK(BM_ResNet56ForwardPruned40);

void BM_PruneStep(benchmark::State& state) {
  asfp::Model<float> model = asfp::build_resnet<float>(9, {16, 32, 64}, {3, 32, 32}, 10, 1);
  asfp::PruneConfig cfg;
  cfg.mode = asfp::PruneMode::soft;
  cfg.goal_rate = 0.3;
  cfg.min_rate = 0.3;
  cfg.epoch_max = 200;
  const asfp::PruneSchedule sched =
      asfp::solve_schedule(cfg.goal_rate, cfg.min_rate, cfg.decay, cfg.epoch_max);
  for (auto _ : state) {
    asfp::MaskState mask = asfp::prune_step(model, cfg, sched, 100);
    benchmark::DoNotOptimize(mask.total());
  }
}
BENCHMARK(BM_PruneStep);

}  // namespace

BENCHMARK_MAIN();
