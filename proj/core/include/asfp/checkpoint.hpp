#pragma once

#include <optional>
#include <string>

#include "asfp/model.hpp"
#include "asfp/prune.hpp"

namespace asfp {

// Single-file format: 8-byte magic, little-endian u64 manifest length, the
// manifest JSON (arch, element type, per-parameter name/shape/offset,
// residual keep sets for compact models, optional mask), then one
// little-endian float32 blob of all state tensors in manifest order.
void save_checkpoint(const Model<float>& model, const MaskState* mask,
                     const std::string& path);

struct LoadedCheckpoint {
  Model<float> model;
  std::optional<MaskState> mask;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace asfp
