#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asfp/model.hpp"

namespace asfp {

// Multiply-accumulate counts for one forward pass of a single example.
// Convolutions count Cout*Cin*K^2*Hout*Wout, the affine head Dout*Din;
// batch norm, activations and pooling count as zero.
struct FlopsReport {
  struct Layer {
    std::string id;
    std::int64_t baseline = 0;
    std::int64_t pruned = 0;
  };
  std::vector<Layer> layers;
  std::int64_t total_baseline = 0;
  std::int64_t total_pruned = 0;
  double pruned_ratio = 0.0;  // 1 - pruned/baseline
};

template <typename T>
FlopsReport count_flops(const Model<T>& model);

// Layer-matched comparison; the pruned model must have the same layer ids.
template <typename T>
FlopsReport count_flops(const Model<T>& baseline, const Model<T>& pruned);

// 1 - (1 - P_next)(1 - P_this): the fraction of a conv layer's work removed
// when its own filters are pruned at P_next and its input at P_this.
double layerwise_reduction(double p_this, double p_next);

std::string flops_to_text(const FlopsReport& report);
std::string flops_to_json(const FlopsReport& report);

}  // namespace asfp
