#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "asfp/model.hpp"

namespace asfp {

enum class PruneMode { hard, soft, asymptotic_soft };

struct PruneConfig {
  PruneMode mode = PruneMode::asymptotic_soft;
  int norm_p = 2;            // filter-importance norm order (1 or 2)
  double goal_rate = 0.0;    // P_goal in [0,1)
  double min_rate = 0.0;     // P_min in [0, P_goal]
  double decay = 1.0 / 8.0;  // D: fraction of epochs at which the rate hits 3/4 of goal
  int epoch_max = 0;
  int interval = 1;          // prune every `interval` epochs
  // Optional restriction over prunable layer ids (empty = all prunable).
  std::function<bool(const std::string&)> layer_filter;

  void validate() const;
};

// Solved exponential rate curve rate(e) = a*exp(-k*e) + b pinned at
// (0, min), (decay*epoch_max, 0.75*goal) and (epoch_max, goal).
struct PruneSchedule {
  double a = 0.0, k = 0.0, b = 0.0;
  double goal_rate = 0.0, min_rate = 0.0, decay = 0.0;
  int epoch_max = 0;
  bool constant = false;  // soft mode / min == goal
};

// Eliminates a and b, then bisects the one-dimensional residual in
// u = k*epoch_max over (1e-6, 100) to |residual| < 1e-12.
PruneSchedule solve_schedule(double goal_rate, double min_rate, double decay,
                             int epoch_max);

// Mode semantics: soft pins the rate at the goal for every epoch;
// asymptotic-soft solves the exponential through its three anchors. Hard
// mode has no per-epoch schedule.
PruneSchedule schedule_for(const PruneConfig& config);

// a*exp(-k*epoch) + b clamped into [min_rate, goal_rate].
double rate_at(const PruneSchedule& schedule, int epoch);

// floor(n * rate); never the whole layer.
int num_to_prune(int n, double rate);

// Eq.-style l_p filter importance: entry j is the p-norm of filter j.
template <typename T>
std::vector<double> filter_norm(const Tensor<T>& weight, int p);

// The `count` indices of smallest norm, ties broken toward the smaller
// index, returned sorted ascending.
std::vector<int> select_prune_set(std::span<const double> norms, int count);

struct MaskState {
  int epoch = 0;
  // layer id -> sorted zeroized filter indices; layers with nothing pruned
  // are omitted.
  std::map<std::string, std::vector<int>> layers;

  int total() const;
  bool empty() const { return layers.empty(); }
};

std::string mask_to_json(const MaskState& mask);
MaskState mask_from_json(const std::string& text);
MaskState load_mask_file(const std::string& path);

// Sets the conv filters at `indices` to zero along with the following
// batch-norm gamma/beta channels, so the zeroized channels contribute
// exactly nothing downstream.
template <typename T>
void zeroize_filters(Model<T>& model, const std::string& layer_id,
                     std::span<const int> indices);

// One pass of Algorithm-style soft pruning: recompute norms on the current
// weights of every prunable layer and zeroize a fresh smallest-norm set of
// size num_to_prune(out_channels, rate_at(epoch)).
template <typename T>
MaskState prune_step(Model<T>& model, const PruneConfig& config,
                     const PruneSchedule& schedule, int epoch);

// Drops zero filters, their batch-norm channels and the matching input
// slices of the next conv; records the kept-channel index set for each
// residual merge. Projection shortcuts stay untouched.
template <typename T>
Model<T> extract_compact(const Model<T>& model, const MaskState& mask);

// One-shot selection at the goal rate followed by extraction; the retained
// width is floor(out_channels * (1 - goal)), at least one filter.
template <typename T>
Model<T> hard_prune(const Model<T>& model, const PruneConfig& config);

}  // namespace asfp
