#include "asfp/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace asfp {

using nlohmann::json;

void PruneConfig::validate() const {
  if (norm_p != 1 && norm_p != 2)
    throw config_error("prune: norm order must be 1 or 2, got " + std::to_string(norm_p));
  if (!(goal_rate >= 0.0 && goal_rate < 1.0))
    throw config_error("prune: P_goal must be in [0,1)");
  if (!(min_rate >= 0.0 && min_rate <= goal_rate))
    throw config_error("prune: P_min must be in [0, P_goal]");
  if (!(decay > 0.0 && decay < 1.0)) throw config_error("prune: D must be in (0,1)");
  if (epoch_max < 1) throw config_error("prune: epoch_max must be >= 1");
  if (interval < 1) throw config_error("prune: interval must be >= 1");
}

namespace {

// (1 - exp(-u*decay)) / (1 - exp(-u)), the anchor-ratio curve in u.
double anchor_ratio(double u, double decay) {
  return (1.0 - std::exp(-u * decay)) / (1.0 - std::exp(-u));
}

}  // namespace

PruneSchedule solve_schedule(double goal_rate, double min_rate, double decay,
                             int epoch_max) {
  PruneSchedule s;
  s.goal_rate = goal_rate;
  s.min_rate = min_rate;
  s.decay = decay;
  s.epoch_max = epoch_max;
  if (epoch_max < 1) throw config_error("solve_schedule: epoch_max must be >= 1");
  if (!(goal_rate >= 0.0 && goal_rate < 1.0) || min_rate < 0.0 || min_rate > goal_rate)
    throw config_error("solve_schedule: rates must satisfy 0 <= P_min <= P_goal < 1");
  if (goal_rate == min_rate) {
    s.constant = true;
    s.b = goal_rate;
    return s;
  }
  if (0.75 * goal_rate <= min_rate)
    throw config_error(
        "solve_schedule: anchors inconsistent, 0.75*P_goal <= P_min leaves no "
        "exponential rise through the midpoint");
  if (!(decay > 0.0 && decay < 1.0))
    throw config_error("solve_schedule: D must be in (0,1)");

  // Anchor equations: a + b = min, a*e^{-u} + b = goal,
  // a*e^{-u*decay} + b = 0.75*goal with u = k*epoch_max. Eliminating a and
  // b leaves anchor_ratio(u, decay) = rho.
  const double rho = (0.75 * goal_rate - min_rate) / (goal_rate - min_rate);
  double lo = 1e-6, hi = 100.0;
  double flo = anchor_ratio(lo, decay) - rho;
  double fhi = anchor_ratio(hi, decay) - rho;
  if (flo * fhi > 0.0)
    throw numeric_error("solve_schedule: bisection bracket failure (rho outside the "
                        "reachable range of the anchor curve)");
  double u = 0.5 * (lo + hi);
  double fu = anchor_ratio(u, decay) - rho;
  for (int iter = 0; iter < 200 && std::abs(fu) >= 1e-12; ++iter) {
    if (flo * fu <= 0.0) {
      hi = u;
    } else {
      lo = u;
      flo = fu;
    }
    u = 0.5 * (lo + hi);
    fu = anchor_ratio(u, decay) - rho;
  }
  if (std::abs(fu) >= 1e-12)
    throw numeric_error("solve_schedule: bisection did not converge");

  s.k = u / static_cast<double>(epoch_max);
  s.a = (min_rate - goal_rate) / (1.0 - std::exp(-u));
  s.b = min_rate - s.a;
  return s;
}

PruneSchedule schedule_for(const PruneConfig& config) {
  config.validate();
  if (config.mode == PruneMode::hard)
    throw config_error("schedule_for: hard pruning has no per-epoch schedule");
  if (config.mode == PruneMode::soft)
    return solve_schedule(config.goal_rate, config.goal_rate, config.decay,
                          config.epoch_max);
  return solve_schedule(config.goal_rate, config.min_rate, config.decay,
                        config.epoch_max);
}

double rate_at(const PruneSchedule& schedule, int epoch) {
  if (epoch < 0 || epoch > schedule.epoch_max)
    throw index_error("rate_at: epoch " + std::to_string(epoch) + " outside [0," +
                      std::to_string(schedule.epoch_max) + "]");
  if (schedule.constant) return schedule.goal_rate;
  const double r = schedule.a * std::exp(-schedule.k * epoch) + schedule.b;
  return std::clamp(r, schedule.min_rate, schedule.goal_rate);
}

int num_to_prune(int n, double rate) {
  if (n < 1) throw config_error("num_to_prune: layer width must be >= 1");
  if (!(rate >= 0.0 && rate < 1.0))
    throw config_error("num_to_prune: rate must be in [0,1)");
  return static_cast<int>(std::floor(static_cast<double>(n) * rate));
}

template <typename T>
std::vector<double> filter_norm(const Tensor<T>& weight, int p) {
  if (p != 1 && p != 2) throw config_error("filter_norm: p must be 1 or 2");
  if (weight.rank() != 4)
    throw shape_error("filter_norm: weight must be [Cout,Cin,K,K], got " +
                      shape_string(weight.shape()));
  const int cout = weight.extent(0);
  const std::int64_t per_filter = weight.numel() / cout;
  std::vector<double> norms(static_cast<std::size_t>(cout));
  const T* w = weight.data();
  for (int j = 0; j < cout; ++j) {
    const T* f = w + static_cast<std::int64_t>(j) * per_filter;
    double acc = 0.0;
    if (p == 1) {
      for (std::int64_t i = 0; i < per_filter; ++i) acc += std::abs(static_cast<double>(f[i]));
      norms[static_cast<std::size_t>(j)] = acc;
    } else {
      for (std::int64_t i = 0; i < per_filter; ++i) {
        const double v = static_cast<double>(f[i]);
        acc += v * v;
      }
      norms[static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
  }
  return norms;
}

std::vector<int> select_prune_set(std::span<const double> norms, int count) {
  const int n = static_cast<int>(norms.size());
  if (count < 0 || count > n)
    throw index_error("select_prune_set: count " + std::to_string(count) +
                      " outside [0," + std::to_string(n) + "]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (norms[static_cast<std::size_t>(a)] != norms[static_cast<std::size_t>(b)])
      return norms[static_cast<std::size_t>(a)] < norms[static_cast<std::size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

int MaskState::total() const {
  int n = 0;
  for (const auto& [id, idx] : layers) n += static_cast<int>(idx.size());
  return n;
}

std::string mask_to_json(const MaskState& mask) {
  json j;
  j["epoch"] = mask.epoch;
  j["layers"] = json::object();
  for (const auto& [id, idx] : mask.layers) j["layers"][id] = idx;
  return j.dump();
}

MaskState mask_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("mask: invalid JSON: ") + e.what());
  }
  MaskState m;
  try {
    m.epoch = j.at("epoch").get<int>();
    for (auto it = j.at("layers").begin(); it != j.at("layers").end(); ++it)
      m.layers[it.key()] = it.value().get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw format_error(std::string("mask: ") + e.what());
  }
  return m;
}

MaskState load_mask_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw format_error("mask: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return mask_from_json(ss.str());
}

namespace {

template <typename T>
ConvBn<T>* find_unit(Model<T>& model, const std::string& layer_id) {
  ConvBn<T>* found = nullptr;
  for_each_conv_unit(model, std::function<void(ConvBn<T>&)>([&](ConvBn<T>& u) {
                       if (u.conv.id == layer_id) found = &u;
                     }));
  return found;
}

template <typename T>
void zeroize_unit(ConvBn<T>& unit, std::span<const int> indices) {
  const std::int64_t per_filter = unit.conv.weight.numel() / unit.conv.out_channels;
  for (int idx : indices) {
    if (idx < 0 || idx >= unit.conv.out_channels)
      throw index_error("zeroize_filters: index " + std::to_string(idx) +
                        " outside [0," + std::to_string(unit.conv.out_channels) +
                        ") for layer " + unit.conv.id);
    T* f = unit.conv.weight.data() + static_cast<std::int64_t>(idx) * per_filter;
    std::fill(f, f + per_filter, T{0});
    unit.bn.gamma(idx) = T{0};
    unit.bn.beta(idx) = T{0};
  }
}

std::vector<int> complement(const std::vector<int>& pruned, int n) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(n) - pruned.size());
  std::size_t p = 0;
  for (int i = 0; i < n; ++i) {
    if (p < pruned.size() && pruned[p] == i) {
      ++p;
    } else {
      keep.push_back(i);
    }
  }
  return keep;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& w, const std::vector<int>& keep) {
  std::vector<int> shape = w.shape();
  const std::int64_t per_row = w.numel() / shape[0];
  shape[0] = static_cast<int>(keep.size());
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const T* src = w.data() + static_cast<std::int64_t>(keep[r]) * per_row;
    std::copy(src, src + per_row, out.data() + static_cast<std::int64_t>(r) * per_row);
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& w, const std::vector<int>& keep) {
  // Conv weight [Cout, Cin, K, K]: select input channels.
  const int cout = w.extent(0), cin = w.extent(1);
  const std::int64_t tail = static_cast<std::int64_t>(w.extent(2)) * w.extent(3);
  Tensor<T> out({cout, static_cast<int>(keep.size()), w.extent(2), w.extent(3)});
  for (int o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < keep.size(); ++c) {
      const T* src = w.data() + (static_cast<std::int64_t>(o) * cin + keep[c]) * tail;
      std::copy(src, src + tail,
                out.data() + (static_cast<std::int64_t>(o) * keep.size() + c) * tail);
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_vec(const Tensor<T>& v, const std::vector<int>& keep) {
  Tensor<T> out({static_cast<int>(keep.size())});
  for (std::size_t i = 0; i < keep.size(); ++i) out[static_cast<std::int64_t>(i)] = v(keep[i]);
  return out;
}

template <typename T>
void shrink_unit_outputs(ConvBn<T>& unit, const std::vector<int>& keep) {
  unit.conv.weight = slice_rows(unit.conv.weight, keep);
  unit.conv.out_channels = static_cast<int>(keep.size());
  unit.bn.gamma = slice_vec(unit.bn.gamma, keep);
  unit.bn.beta = slice_vec(unit.bn.beta, keep);
  unit.bn.running_mean = slice_vec(unit.bn.running_mean, keep);
  unit.bn.running_var = slice_vec(unit.bn.running_var, keep);
  unit.bn.channels = static_cast<int>(keep.size());
}

template <typename T>
void shrink_unit_inputs(ConvBn<T>& unit, const std::vector<int>& keep) {
  unit.conv.weight = slice_cols(unit.conv.weight, keep);
  unit.conv.in_channels = static_cast<int>(keep.size());
}

template <typename T>
Tensor<T> slice_cols_affine(const Tensor<T>& w, const std::vector<int>& keep) {
  const int rows = w.extent(0);
  Tensor<T> out({rows, static_cast<int>(keep.size())});
  for (int r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < keep.size(); ++c)
      out(r, static_cast<int>(c)) = w(r, keep[c]);
  return out;
}

// Pruned indices for one layer, validated against the model: in range and
// currently holding exactly-zero filters.
template <typename T>
std::vector<int> checked_pruned(const ConvBn<T>& unit, const MaskState& mask) {
  auto it = mask.layers.find(unit.conv.id);
  if (it == mask.layers.end()) return {};
  std::vector<int> pruned = it->second;
  std::sort(pruned.begin(), pruned.end());
  const std::int64_t per_filter = unit.conv.weight.numel() / unit.conv.out_channels;
  int prev = -1;
  for (int idx : pruned) {
    if (idx <= prev || idx >= unit.conv.out_channels)
      throw index_error("extract_compact: mask index " + std::to_string(idx) +
                        " invalid for layer " + unit.conv.id + " of width " +
                        std::to_string(unit.conv.out_channels));
    prev = idx;
    const T* f = unit.conv.weight.data() + static_cast<std::int64_t>(idx) * per_filter;
    for (std::int64_t i = 0; i < per_filter; ++i) {
      if (f[i] != T{0})
        throw state_error("extract_compact: mask marks filter " + std::to_string(idx) +
                          " of layer " + unit.conv.id + " but its weights are not zero");
    }
  }
  return pruned;
}

}  // namespace

template <typename T>
void zeroize_filters(Model<T>& model, const std::string& layer_id,
                     std::span<const int> indices) {
  ConvBn<T>* unit = find_unit(model, layer_id);
  if (!unit) throw index_error("zeroize_filters: unknown layer id \"" + layer_id + "\"");
  if (!unit->conv.prunable)
    throw config_error("zeroize_filters: layer \"" + layer_id + "\" is not prunable");
  if (indices.empty()) return;
  zeroize_unit(*unit, indices);
  ++model.revision;
}

template <typename T>
MaskState prune_step(Model<T>& model, const PruneConfig& config,
                     const PruneSchedule& schedule, int epoch) {
  config.validate();
  const double rate = rate_at(schedule, epoch);
  MaskState mask;
  mask.epoch = epoch;
  for_each_conv_unit(model, std::function<void(ConvBn<T>&)>([&](ConvBn<T>& unit) {
    if (!unit.conv.prunable) return;
    if (config.layer_filter && !config.layer_filter(unit.conv.id)) return;
    const int count = num_to_prune(unit.conv.out_channels, rate);
    if (count == 0) return;
    const std::vector<double> norms = filter_norm(unit.conv.weight, config.norm_p);
    std::vector<int> idx = select_prune_set(norms, count);
    zeroize_unit(unit, idx);
    mask.layers[unit.conv.id] = std::move(idx);
  }));
  ++model.revision;
  return mask;
}

template <typename T>
Model<T> extract_compact(const Model<T>& model, const MaskState& mask) {
  for (const auto& [id, idx] : mask.layers) {
    (void)idx;
    ConvBn<T>* unit = find_unit(const_cast<Model<T>&>(model), id);
    if (!unit)
      throw index_error("extract_compact: mask names unknown layer \"" + id + "\"");
  }

  Model<T> compact = model;
  ++compact.revision;
  if (compact.arch.kind == ArchKind::resnet) {
    for (auto& blk : compact.blocks) {
      const std::vector<int> pruned1 = checked_pruned(blk.first, mask);
      const std::vector<int> pruned2 = checked_pruned(blk.second, mask);
      if (!pruned1.empty()) {
        const std::vector<int> keep1 = complement(pruned1, blk.first.conv.out_channels);
        shrink_unit_outputs(blk.first, keep1);
        shrink_unit_inputs(blk.second, keep1);
      }
      if (!pruned2.empty()) {
        const std::vector<int> keep2 = complement(pruned2, blk.second.conv.out_channels);
        shrink_unit_outputs(blk.second, keep2);
        blk.merge_keep = keep2;
      }
    }
  } else {
    std::vector<int> carry;  // kept channels of the previous conv
    for (std::size_t i = 0; i < compact.chain.size(); ++i) {
      if (!carry.empty()) shrink_unit_inputs(compact.chain[i], carry);
      const std::vector<int> pruned = checked_pruned(compact.chain[i], mask);
      if (!pruned.empty()) {
        const std::vector<int> keep =
            complement(pruned, compact.chain[i].conv.out_channels);
        shrink_unit_outputs(compact.chain[i], keep);
        carry = keep;
      } else {
        carry.clear();
      }
    }
    if (!carry.empty()) {
      // Global average pooling maps channel c to head input c.
      compact.head.weight = slice_cols_affine(compact.head.weight, carry);
    }
  }
  return compact;
}

template <typename T>
Model<T> hard_prune(const Model<T>& model, const PruneConfig& config) {
  config.validate();
  Model<T> pruned = model;
  MaskState mask;
  for_each_conv_unit(pruned, std::function<void(ConvBn<T>&)>([&](ConvBn<T>& unit) {
    if (!unit.conv.prunable) return;
    if (config.layer_filter && !config.layer_filter(unit.conv.id)) return;
    const int n = unit.conv.out_channels;
    // Hard pruning targets the retained architecture: keep
    // floor(n*(1-goal)) filters, never fewer than one.
    const int keep = std::max(
        1, static_cast<int>(std::floor(static_cast<double>(n) * (1.0 - config.goal_rate))));
    const int count = n - keep;
    if (count == 0) return;
    const std::vector<double> norms = filter_norm(unit.conv.weight, config.norm_p);
    std::vector<int> idx = select_prune_set(norms, count);
    zeroize_unit(unit, idx);
    mask.layers[unit.conv.id] = std::move(idx);
  }));
  ++pruned.revision;
  return extract_compact(pruned, mask);
}

#define ASFP_INSTANTIATE_PRUNE(T)                                                      \
  template std::vector<double> filter_norm<T>(const Tensor<T>&, int);                 \
  template void zeroize_filters<T>(Model<T>&, const std::string&, std::span<const int>); \
  template MaskState prune_step<T>(Model<T>&, const PruneConfig&, const PruneSchedule&, \
                                   int);                                              \
  template Model<T> extract_compact<T>(const Model<T>&, const MaskState&);            \
  template Model<T> hard_prune<T>(const Model<T>&, const PruneConfig&);

ASFP_INSTANTIATE_PRUNE(float)
ASFP_INSTANTIATE_PRUNE(double)

#undef ASFP_INSTANTIATE_PRUNE

}  // namespace asfp
