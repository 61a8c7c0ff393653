#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asfp/ops.hpp"
#include "asfp/tensor.hpp"

namespace asfp {

enum class ArchKind { plain, resnet };

struct ArchSpec {
  ArchKind kind = ArchKind::resnet;
  int blocks_per_stage = 0;        // resnet only
  std::vector<int> widths;         // resnet stage widths / plain conv widths
  int classes = 10;
  std::array<int, 3> input = {3, 32, 32};  // C, H, W
};

// {"arch":"resnet","n":9,"widths":[16,32,64],"classes":10,"input":[3,32,32]}
// or {"arch":"plain","widths":[...],...}. Unknown keys are rejected.
ArchSpec parse_arch_json(const std::string& text);
ArchSpec load_arch_file(const std::string& path);
std::string arch_to_json(const ArchSpec& arch);

template <typename T>
struct ConvLayer {
  std::string id;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool prunable = false;
  Tensor<T> weight;  // [out, in, k, k]
};

template <typename T>
struct BatchNormLayer {
  int channels = 0;
  Tensor<T> gamma, beta, running_mean, running_var;
};

template <typename T>
struct ConvBn {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
};

template <typename T>
struct BasicBlock {
  ConvBn<T> first;                      // 3x3, prunable
  ConvBn<T> second;                     // 3x3, prunable
  std::optional<ConvBn<T>> projection;  // 1x1 at stage transitions, never pruned
  int out_width = 0;                    // residual width (unpruned)
  std::vector<int> merge_keep;          // index set I for the residual merge;
                                        // empty means all channels
};

template <typename T>
struct AffineLayer {
  std::string id;
  Tensor<T> weight;  // [classes, features]
  Tensor<T> bias;    // [classes]
};

template <typename T>
struct Model {
  ArchSpec arch;
  ConvBn<T> stem;                     // resnet only
  std::vector<BasicBlock<T>> blocks;  // resnet only
  std::vector<ConvBn<T>> chain;       // plain only
  std::vector<char> pool_after;       // plain: 2x2 max pool after unit i
  AffineLayer<T> head;
  bool training = false;
  std::uint64_t revision = 0;  // bumped on mutation, guards stale caches
};

template <typename T>
Model<T> build_plain_cnn(const std::vector<int>& widths, std::array<int, 3> input,
                         int classes, std::uint32_t seed);

template <typename T>
Model<T> build_resnet(int blocks_per_stage, const std::vector<int>& widths,
                      std::array<int, 3> input, int classes, std::uint32_t seed);

template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint32_t seed);

template <typename T>
struct UnitCache {
  Tensor<T> input;
  Tensor<T> conv_out;
  Tensor<T> mean, var;  // batch stats (training forward only)
  Tensor<T> bn_out;
};

template <typename T>
struct PoolCache {
  std::vector<std::int64_t> argmax;
  std::vector<int> in_shape;
};

template <typename T>
struct BlockCache {
  UnitCache<T> first;
  UnitCache<T> second;
  std::optional<UnitCache<T>> projection;
  Tensor<T> pre_relu;
};

template <typename T>
struct ForwardCache {
  std::uint64_t revision = 0;
  UnitCache<T> stem;
  std::vector<BlockCache<T>> blocks;
  std::vector<UnitCache<T>> chain;
  std::vector<PoolCache<T>> pools;  // one slot per chain unit
  Tensor<T> gap_input;
  Tensor<T> head_input;
};

// Forward pass honoring model.training; fills the cache needed by backward.
// Training mode updates batch-norm running stats in place.
template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& batch, ForwardCache<T>& cache);

// Cache-free eval-mode forward; pure function of (parameters, input).
template <typename T>
Tensor<T> forward_eval(const Model<T>& model, const Tensor<T>& batch);

// Gradients for every parameter, returned in a model-shaped container
// (running stats stay zero). Zeroized filters receive gradients like any
// other parameter.
template <typename T>
Model<T> backward(const Model<T>& model, const ForwardCache<T>& cache,
                  const Tensor<T>& d_logits);

// Piecewise residual merge: out[idx] = residual[idx] + conv_out[position of
// idx in index_set] for idx in the set, out[idx] = residual[idx] otherwise.
template <typename T>
Tensor<T> residual_add(const Tensor<T>& residual, const Tensor<T>& conv_out,
                       std::span<const int> index_set);

// Trainable parameters in a fixed order; names are layer ids plus role
// suffixes (.weight, .gamma, .beta, .bias).
template <typename T>
void for_each_param(Model<T>& model,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn);
template <typename T>
void for_each_param(const Model<T>& model,
                    const std::function<void(const std::string&, const Tensor<T>&)>& fn);

// Parameters plus batch-norm running stats (.running_mean, .running_var);
// this is the checkpointed state.
template <typename T>
void for_each_state(Model<T>& model,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn);
template <typename T>
void for_each_state(const Model<T>& model,
                    const std::function<void(const std::string&, const Tensor<T>&)>& fn);

// All conv+bn units (stem, block branches, projections, plain chain).
template <typename T>
void for_each_conv_unit(Model<T>& model, const std::function<void(ConvBn<T>&)>& fn);
template <typename T>
void for_each_conv_unit(const Model<T>& model,
                        const std::function<void(const ConvBn<T>&)>& fn);

template <typename T>
std::int64_t param_count(const Model<T>& model);

// Convs + the affine head, excluding projection shortcuts (the usual depth
// convention: 6n+2 for the three-stage residual nets here).
template <typename T>
int weighted_layer_count(const Model<T>& model);

// Model-shaped container with all tensors zeroed; backward accumulates into
// this layout.
template <typename T>
Model<T> grad_skeleton(const Model<T>& model);

}  // namespace asfp
