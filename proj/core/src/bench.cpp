#include "asfp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "asfp/flops.hpp"
#include "asfp/random.hpp"
#include "json.hpp"

namespace asfp {

namespace {

template <typename T>
Tensor<T> bench_input(const Model<T>& model, int batch, std::uint32_t seed) {
  Tensor<T> x({batch, model.arch.input[0], model.arch.input[1], model.arch.input[2]});
  Rng rng(seed);
  rng.fill_normal(x, 0.0, 1.0);
  return x;
}

}  // namespace

template <typename T>
TimingStats bench_forward(const Model<T>& model, int batch, int reps, int warmup,
                          std::uint32_t seed) {
  if (reps < 3) throw config_error("bench_forward: reps must be >= 3");
  if (batch < 1) throw config_error("bench_forward: batch must be >= 1");
  if (warmup < 0) throw config_error("bench_forward: warmup must be >= 0");
  const Tensor<T> x = bench_input(model, batch, seed);

  volatile T sink = T{0};
  for (int i = 0; i < warmup; ++i) {
    Tensor<T> y = forward_eval(model, x);
    sink = sink + y[0];
  }
  std::vector<double> ms(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<T> y = forward_eval(model, x);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + y[0];
    ms[static_cast<std::size_t>(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  TimingStats s;
  s.reps = reps;
  s.batch = batch;
  s.min_ms = ms.front();
  s.max_ms = ms.back();
  const std::size_t mid = ms.size() / 2;
  s.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  return s;
}

template <typename T>
SpeedupReport bench_speedup(const Model<T>& baseline, const Model<T>& pruned, int batch,
                            int reps, int warmup, std::uint32_t seed) {
  SpeedupReport r;
  r.baseline = bench_forward(baseline, batch, reps, warmup, seed);
  r.pruned = bench_forward(pruned, batch, reps, warmup, seed);
  r.realistic_speedup = r.baseline.median_ms / r.pruned.median_ms;
  const FlopsReport f = count_flops(baseline, pruned);
  r.flops_pruned_ratio = f.pruned_ratio;
  r.theoretical_speedup =
      static_cast<double>(f.total_baseline) / static_cast<double>(f.total_pruned);
  return r;
}

std::string speedup_to_text(const SpeedupReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "batch %d, %d reps\n"
                "baseline forward: median %.3f ms (min %.3f, max %.3f)\n"
                "pruned forward:   median %.3f ms (min %.3f, max %.3f)\n"
                "realistic speedup:   %.2fx\n"
                "theoretical speedup: %.2fx (%.1f%% of MACs pruned)\n"
                "theoretical-realistic gap: %.2fx\n",
                r.baseline.batch, r.baseline.reps, r.baseline.median_ms, r.baseline.min_ms,
                r.baseline.max_ms, r.pruned.median_ms, r.pruned.min_ms, r.pruned.max_ms,
                r.realistic_speedup, r.theoretical_speedup, 100.0 * r.flops_pruned_ratio,
                r.theoretical_speedup - r.realistic_speedup);
  return buf;
}

std::string speedup_to_json(const SpeedupReport& r) {
  nlohmann::json j;
  j["batch"] = r.baseline.batch;
  j["reps"] = r.baseline.reps;
  j["baseline_ms"] = r.baseline.median_ms;
  j["baseline_min_ms"] = r.baseline.min_ms;
  j["baseline_max_ms"] = r.baseline.max_ms;
  j["pruned_ms"] = r.pruned.median_ms;
  j["pruned_min_ms"] = r.pruned.min_ms;
  j["pruned_max_ms"] = r.pruned.max_ms;
  j["realistic_speedup"] = r.realistic_speedup;
  j["theoretical_speedup"] = r.theoretical_speedup;
  j["flops_pruned_ratio"] = r.flops_pruned_ratio;
  return j.dump();
}

template TimingStats bench_forward<float>(const Model<float>&, int, int, int,
                                          std::uint32_t);
template SpeedupReport bench_speedup<float>(const Model<float>&, const Model<float>&, int,
                                            int, int, std::uint32_t);

}  // namespace asfp
