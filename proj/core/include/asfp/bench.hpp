#pragma once

#include <cstdint>
#include <string>

#include "asfp/model.hpp"

namespace asfp {

struct TimingStats {
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  int reps = 0;
  int batch = 0;
};

// Median wall-clock time of an eval-mode forward pass over `reps`
// repetitions after `warmup` discarded runs; single-threaded, random input
// fixed by seed.
template <typename T>
TimingStats bench_forward(const Model<T>& model, int batch, int reps, int warmup,
                          std::uint32_t seed);

struct SpeedupReport {
  TimingStats baseline;
  TimingStats pruned;
  double realistic_speedup = 0.0;    // baseline_ms / pruned_ms
  double theoretical_speedup = 0.0;  // baseline_macs / pruned_macs
  double flops_pruned_ratio = 0.0;
};

// Times the two models on identical inputs and pairs the measured speedup
// with the MAC-count prediction. The theoretical-realistic gap is reported,
// not asserted.
template <typename T>
SpeedupReport bench_speedup(const Model<T>& baseline, const Model<T>& pruned, int batch,
                            int reps, int warmup, std::uint32_t seed);

std::string speedup_to_text(const SpeedupReport& report);
std::string speedup_to_json(const SpeedupReport& report);

}  // namespace asfp
