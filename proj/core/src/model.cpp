#include "asfp/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "asfp/random.hpp"
#include "json.hpp"

namespace asfp {

using nlohmann::json;

namespace {

ArchSpec parse_arch(const json& j) {
  if (!j.is_object()) throw format_error("arch: expected a JSON object");
  static const char* known[] = {"arch", "n", "widths", "classes", "input"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw format_error("arch: unknown key \"" + it.key() + "\"");
  }
  ArchSpec a;
  const std::string kind = j.at("arch").get<std::string>();
  if (kind == "resnet") {
    a.kind = ArchKind::resnet;
    a.blocks_per_stage = j.at("n").get<int>();
  } else if (kind == "plain") {
    a.kind = ArchKind::plain;
    if (j.contains("n")) throw format_error("arch: \"n\" only applies to resnet");
  } else {
    throw format_error("arch: unknown architecture \"" + kind + "\"");
  }
  a.widths = j.at("widths").get<std::vector<int>>();
  if (j.contains("classes")) a.classes = j.at("classes").get<int>();
  if (j.contains("input")) {
    auto in = j.at("input").get<std::vector<int>>();
    if (in.size() != 3) throw format_error("arch: \"input\" must be [C,H,W]");
    a.input = {in[0], in[1], in[2]};
  }
  if (a.widths.empty()) throw config_error("arch: widths must be non-empty");
  for (int w : a.widths)
    if (w < 1) throw config_error("arch: widths must be >= 1");
  if (a.kind == ArchKind::resnet && a.blocks_per_stage < 1)
    throw config_error("arch: resnet needs n >= 1 blocks per stage");
  if (a.classes < 2) throw config_error("arch: needs at least 2 classes");
  for (int e : a.input)
    if (e < 1) throw config_error("arch: input extents must be >= 1");
  return a;
}

template <typename T>
ConvBn<T> make_conv_bn(const std::string& id, int in_ch, int out_ch, int kernel,
                       int stride, int pad, bool prunable, Rng& rng) {
  ConvBn<T> u;
  u.conv.id = id;
  u.conv.in_channels = in_ch;
  u.conv.out_channels = out_ch;
  u.conv.kernel = kernel;
  u.conv.stride = stride;
  u.conv.pad = pad;
  u.conv.prunable = prunable;
  u.conv.weight = Tensor<T>({out_ch, in_ch, kernel, kernel});
  // Kaiming fan-out init.
  const double fan_out = static_cast<double>(out_ch) * kernel * kernel;
  rng.fill_normal(u.conv.weight, 0.0, std::sqrt(2.0 / fan_out));
  u.bn.channels = out_ch;
  u.bn.gamma = Tensor<T>::full({out_ch}, T{1});
  u.bn.beta = Tensor<T>({out_ch});
  u.bn.running_mean = Tensor<T>({out_ch});
  u.bn.running_var = Tensor<T>::full({out_ch}, T{1});
  return u;
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// conv -> bn, honoring the model mode; relu is applied by the caller where
// the architecture wants it. Training mode updates the running stats.
template <typename T>
Tensor<T> run_unit(ConvBn<T>& unit, bool training, const Tensor<T>& x,
                   UnitCache<T>* cache) {
  Tensor<T> conv_out = conv2d(x, unit.conv.weight, unit.conv.stride, unit.conv.pad);
  BatchNormOut<T> bn_out = batchnorm(conv_out, unit.bn.gamma, unit.bn.beta,
                                     unit.bn.running_mean, unit.bn.running_var,
                                     static_cast<T>(kBnEps),
                                     static_cast<T>(kBnMomentum), training);
  if (cache) {
    cache->input = x;
    cache->conv_out = std::move(conv_out);
    cache->mean = std::move(bn_out.mean);
    cache->var = std::move(bn_out.var);
    cache->bn_out = bn_out.output;
  }
  return std::move(bn_out.output);
}

template <typename T>
void validate_batch(const Model<T>& model, const Tensor<T>& batch) {
  const char* first_id = model.arch.kind == ArchKind::resnet
                             ? (model.stem.conv.id.empty() ? "conv0" : model.stem.conv.id.c_str())
                             : (model.chain.empty() ? "conv0" : model.chain.front().conv.id.c_str());
  if (batch.rank() != 4)
    throw shape_error(std::string("forward: batch must be [N,C,H,W] at layer ") + first_id +
                      ", got " + shape_string(batch.shape()));
  if (batch.extent(1) != model.arch.input[0] || batch.extent(2) != model.arch.input[1] ||
      batch.extent(3) != model.arch.input[2])
    throw shape_error(std::string("forward: batch ") + shape_string(batch.shape()) +
                      " does not match model input [" + std::to_string(model.arch.input[0]) +
                      "," + std::to_string(model.arch.input[1]) + "," +
                      std::to_string(model.arch.input[2]) + "] at layer " + first_id);
}

// Residual merge into an existing full-width tensor: shortcut[idx] +=
// branch[pos]. Matches residual_add() exactly but avoids one copy.
template <typename T>
void merge_into(Tensor<T>& shortcut, const Tensor<T>& branch,
                std::span<const int> keep) {
  const int n = shortcut.extent(0);
  const int cr = shortcut.extent(1);
  const int cc = branch.extent(1);
  const std::int64_t plane =
      static_cast<std::int64_t>(shortcut.extent(2)) * shortcut.extent(3);
  if (keep.empty()) {
    // Full-width add.
    if (cc != cr)
      throw index_error("residual merge: branch channels " + std::to_string(cc) +
                        " != residual channels " + std::to_string(cr) +
                        " with no index set");
    T* s = shortcut.data();
    const T* b = branch.data();
    const std::int64_t total = shortcut.numel();
    for (std::int64_t i = 0; i < total; ++i) s[i] += b[i];
    return;
  }
  if (static_cast<int>(keep.size()) != cc)
    throw index_error("residual merge: index set size " + std::to_string(keep.size()) +
                      " != branch channels " + std::to_string(cc));
  for (int b = 0; b < n; ++b) {
    for (int pos = 0; pos < cc; ++pos) {
      const int idx = keep[static_cast<std::size_t>(pos)];
      T* s = shortcut.data() + (static_cast<std::int64_t>(b) * cr + idx) * plane;
      const T* v = branch.data() + (static_cast<std::int64_t>(b) * cc + pos) * plane;
      for (std::int64_t i = 0; i < plane; ++i) s[i] += v[i];
    }
  }
}

template <typename T>
Tensor<T> forward_impl(Model<T>& model, const Tensor<T>& batch, bool training,
                       ForwardCache<T>* cache) {
  validate_batch(model, batch);
  Tensor<T> x = batch;
  if (model.arch.kind == ArchKind::resnet) {
    x = relu(run_unit(model.stem, training, x, cache ? &cache->stem : nullptr));
    if (cache) cache->blocks.resize(model.blocks.size());
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
      BasicBlock<T>& blk = model.blocks[i];
      BlockCache<T>* bc = cache ? &cache->blocks[i] : nullptr;
      Tensor<T> y = relu(run_unit(blk.first, training, x, bc ? &bc->first : nullptr));
      y = run_unit(blk.second, training, y, bc ? &bc->second : nullptr);
      Tensor<T> shortcut;
      if (blk.projection) {
        if (bc) bc->projection.emplace();
        shortcut = run_unit(*blk.projection, training, x,
                            bc ? &*bc->projection : nullptr);
      } else {
        shortcut = x;
      }
      merge_into(shortcut, y, blk.merge_keep);
      if (bc) bc->pre_relu = shortcut;
      x = relu(shortcut);
    }
  } else {
    if (cache) {
      cache->chain.resize(model.chain.size());
      cache->pools.resize(model.chain.size());
    }
    for (std::size_t i = 0; i < model.chain.size(); ++i) {
      x = relu(run_unit(model.chain[i], training, x, cache ? &cache->chain[i] : nullptr));
      if (model.pool_after[i]) {
        MaxPoolOut<T> p = max_pool2(x);
        if (cache) {
          cache->pools[i].argmax = std::move(p.argmax);
          cache->pools[i].in_shape = x.shape();
        }
        x = std::move(p.output);
      }
    }
  }
  if (cache) cache->gap_input = x;
  Tensor<T> pooled = global_avg_pool(x);
  if (cache) cache->head_input = pooled;
  return affine(pooled, model.head.weight, model.head.bias);
}

// Backward through one conv+bn unit; returns d(unit input) and accumulates
// parameter gradients.
template <typename T>
Tensor<T> unit_backward(const ConvBn<T>& unit, const UnitCache<T>& cache,
                        const Tensor<T>& d_bn_out, ConvBn<T>& grads) {
  BatchNormGrad<T> bg = batchnorm_grad(cache.conv_out, unit.bn.gamma, cache.mean,
                                       cache.var, static_cast<T>(kBnEps), d_bn_out);
  for (std::int64_t i = 0; i < bg.d_gamma.numel(); ++i) {
    grads.bn.gamma[i] += bg.d_gamma[i];
    grads.bn.beta[i] += bg.d_beta[i];
  }
  ConvGrad<T> cg =
      conv2d_grad(cache.input, unit.conv.weight, bg.d_input, unit.conv.stride,
                  unit.conv.pad);
  for (std::int64_t i = 0; i < cg.d_weight.numel(); ++i)
    grads.conv.weight[i] += cg.d_weight[i];
  return std::move(cg.d_input);
}

// Split the merged gradient back into the branch channels named by keep.
template <typename T>
Tensor<T> gather_channels(const Tensor<T>& d_full, std::span<const int> keep) {
  const int n = d_full.extent(0);
  const int cc = static_cast<int>(keep.size());
  const std::int64_t plane =
      static_cast<std::int64_t>(d_full.extent(2)) * d_full.extent(3);
  Tensor<T> out({n, cc, d_full.extent(2), d_full.extent(3)});
  const int cr = d_full.extent(1);
  for (int b = 0; b < n; ++b) {
    for (int pos = 0; pos < cc; ++pos) {
      const T* src =
          d_full.data() + (static_cast<std::int64_t>(b) * cr + keep[pos]) * plane;
      T* dst = out.data() + (static_cast<std::int64_t>(b) * cc + pos) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i];
    }
  }
  return out;
}

}  // namespace

ArchSpec parse_arch_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("arch: invalid JSON: ") + e.what());
  }
  try {
    return parse_arch(j);
  } catch (const json::exception& e) {
    throw format_error(std::string("arch: ") + e.what());
  }
}

ArchSpec load_arch_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw format_error("arch: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_arch_json(ss.str());
}

std::string arch_to_json(const ArchSpec& arch) {
  json j;
  j["arch"] = arch.kind == ArchKind::resnet ? "resnet" : "plain";
  if (arch.kind == ArchKind::resnet) j["n"] = arch.blocks_per_stage;
  j["widths"] = arch.widths;
  j["classes"] = arch.classes;
  j["input"] = std::vector<int>{arch.input[0], arch.input[1], arch.input[2]};
  return j.dump();
}

template <typename T>
Model<T> build_plain_cnn(const std::vector<int>& widths, std::array<int, 3> input,
                         int classes, std::uint32_t seed) {
  ArchSpec arch;
  arch.kind = ArchKind::plain;
  arch.widths = widths;
  arch.classes = classes;
  arch.input = input;
  if (widths.empty()) throw config_error("build_plain_cnn: widths must be non-empty");

  Model<T> m;
  m.arch = arch;
  Rng rng(seed);
  int in_ch = input[0];
  for (std::size_t i = 0; i < widths.size(); ++i) {
    m.chain.push_back(make_conv_bn<T>("conv" + std::to_string(i), in_ch, widths[i], 3, 1,
                                      1, /*prunable=*/true, rng));
    m.pool_after.push_back(i + 1 < widths.size() ? 1 : 0);
    in_ch = widths[i];
  }
  m.head.id = "fc";
  m.head.weight = Tensor<T>({classes, widths.back()});
  rng.fill_normal(m.head.weight, 0.0, 1.0 / std::sqrt(static_cast<double>(widths.back())));
  m.head.bias = Tensor<T>({classes});
  return m;
}

template <typename T>
Model<T> build_resnet(int blocks_per_stage, const std::vector<int>& widths,
                      std::array<int, 3> input, int classes, std::uint32_t seed) {
  if (blocks_per_stage < 1) throw config_error("build_resnet: n must be >= 1");
  if (widths.empty()) throw config_error("build_resnet: widths must be non-empty");
  ArchSpec arch;
  arch.kind = ArchKind::resnet;
  arch.blocks_per_stage = blocks_per_stage;
  arch.widths = widths;
  arch.classes = classes;
  arch.input = input;

  Model<T> m;
  m.arch = arch;
  Rng rng(seed);
  m.stem = make_conv_bn<T>("conv0", input[0], widths[0], 3, 1, 1, /*prunable=*/false, rng);
  int in_ch = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const int width = widths[s];
    for (int b = 0; b < blocks_per_stage; ++b) {
      const bool transition = b == 0 && s > 0;
      const int stride = transition ? 2 : 1;
      const std::string base = "s" + std::to_string(s + 1) + "b" + std::to_string(b);
      BasicBlock<T> blk;
      blk.out_width = width;
      blk.first = make_conv_bn<T>(base + "c1", in_ch, width, 3, stride, 1,
                                  /*prunable=*/true, rng);
      blk.second = make_conv_bn<T>(base + "c2", width, width, 3, 1, 1,
                                   /*prunable=*/true, rng);
      if (transition || in_ch != width) {
        blk.projection = make_conv_bn<T>(base + "p", in_ch, width, 1, stride, 0,
                                         /*prunable=*/false, rng);
      }
      m.blocks.push_back(std::move(blk));
      in_ch = width;
    }
  }
  m.head.id = "fc";
  m.head.weight = Tensor<T>({classes, widths.back()});
  rng.fill_normal(m.head.weight, 0.0, 1.0 / std::sqrt(static_cast<double>(widths.back())));
  m.head.bias = Tensor<T>({classes});
  return m;
}

template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint32_t seed) {
  if (arch.kind == ArchKind::resnet)
    return build_resnet<T>(arch.blocks_per_stage, arch.widths, arch.input, arch.classes,
                           seed);
  return build_plain_cnn<T>(arch.widths, arch.input, arch.classes, seed);
}

template <typename T>
Tensor<T> forward(Model<T>& model, const Tensor<T>& batch, ForwardCache<T>& cache) {
  cache = ForwardCache<T>{};
  cache.revision = model.revision;
  return forward_impl(model, batch, model.training, &cache);
}

template <typename T>
Tensor<T> forward_eval(const Model<T>& model, const Tensor<T>& batch) {
  // Eval-mode batchnorm never writes the running stats, so the model stays
  // untouched despite the cast.
  return forward_impl(const_cast<Model<T>&>(model), batch, /*training=*/false,
                      static_cast<ForwardCache<T>*>(nullptr));
}

template <typename T>
Model<T> backward(const Model<T>& model, const ForwardCache<T>& cache,
                  const Tensor<T>& d_logits) {
  if (cache.revision != model.revision)
    throw state_error("backward: cache is stale (model mutated since forward)");
  Model<T> grads = grad_skeleton(model);

  AffineGrad<T> hg = affine_grad(cache.head_input, model.head.weight, d_logits);
  grads.head.weight = std::move(hg.d_weight);
  grads.head.bias = std::move(hg.d_bias);
  Tensor<T> d = global_avg_pool_grad(cache.gap_input.shape(), hg.d_input);

  if (model.arch.kind == ArchKind::resnet) {
    for (std::size_t ri = model.blocks.size(); ri-- > 0;) {
      const BasicBlock<T>& blk = model.blocks[ri];
      const BlockCache<T>& bc = cache.blocks[ri];
      BasicBlock<T>& bg = grads.blocks[ri];
      Tensor<T> d_pre = relu_grad(bc.pre_relu, d);
      Tensor<T> d_branch = blk.merge_keep.empty()
                               ? d_pre
                               : gather_channels(d_pre, blk.merge_keep);
      Tensor<T> d_second_in = unit_backward(blk.second, bc.second, d_branch, bg.second);
      Tensor<T> d_first_out = relu_grad(bc.first.bn_out, d_second_in);
      Tensor<T> d_in = unit_backward(blk.first, bc.first, d_first_out, bg.first);
      if (blk.projection) {
        Tensor<T> d_proj_in =
            unit_backward(*blk.projection, *bc.projection, d_pre, *bg.projection);
        for (std::int64_t i = 0; i < d_in.numel(); ++i) d_in[i] += d_proj_in[i];
      } else {
        for (std::int64_t i = 0; i < d_in.numel(); ++i) d_in[i] += d_pre[i];
      }
      d = std::move(d_in);
    }
    Tensor<T> d_stem_out = relu_grad(cache.stem.bn_out, d);
    unit_backward(model.stem, cache.stem, d_stem_out, grads.stem);
  } else {
    for (std::size_t ri = model.chain.size(); ri-- > 0;) {
      if (model.pool_after[ri])
        d = max_pool2_grad(cache.pools[ri].argmax, cache.pools[ri].in_shape, d);
      Tensor<T> d_unit_out = relu_grad(cache.chain[ri].bn_out, d);
      d = unit_backward(model.chain[ri], cache.chain[ri], d_unit_out, grads.chain[ri]);
    }
  }
  return grads;
}

template <typename T>
Tensor<T> residual_add(const Tensor<T>& residual, const Tensor<T>& conv_out,
                       std::span<const int> index_set) {
  if (residual.rank() != 4 || conv_out.rank() != 4)
    throw shape_error("residual_add: tensors must be [N,C,H,W]");
  if (residual.extent(0) != conv_out.extent(0) ||
      residual.extent(2) != conv_out.extent(2) ||
      residual.extent(3) != conv_out.extent(3))
    throw shape_error("residual_add: residual " + shape_string(residual.shape()) +
                      " vs conv output " + shape_string(conv_out.shape()));
  const int cr = residual.extent(1);
  const int cc = conv_out.extent(1);
  if (static_cast<int>(index_set.size()) != cc)
    throw index_error("residual_add: index set size " + std::to_string(index_set.size()) +
                      " != conv output channels " + std::to_string(cc));
  int prev = -1;
  for (int idx : index_set) {
    if (idx <= prev || idx >= cr)
      throw index_error("residual_add: index set must be strictly increasing within [0," +
                        std::to_string(cr) + ")");
    prev = idx;
  }
  Tensor<T> out = residual;
  merge_into(out, conv_out, index_set);
  return out;
}

namespace {

template <typename ModelT, typename Fn>
void visit_params(ModelT& m, Fn&& fn, bool include_running) {
  auto unit = [&](auto& u) {
    fn(u.conv.id + ".weight", u.conv.weight);
    fn(u.conv.id + ".gamma", u.bn.gamma);
    fn(u.conv.id + ".beta", u.bn.beta);
    if (include_running) {
      fn(u.conv.id + ".running_mean", u.bn.running_mean);
      fn(u.conv.id + ".running_var", u.bn.running_var);
    }
  };
  if (m.arch.kind == ArchKind::resnet) {
    unit(m.stem);
    for (auto& blk : m.blocks) {
      unit(blk.first);
      unit(blk.second);
      if (blk.projection) unit(*blk.projection);
    }
  } else {
    for (auto& u : m.chain) unit(u);
  }
  fn(m.head.id + ".weight", m.head.weight);
  fn(m.head.id + ".bias", m.head.bias);
}

}  // namespace

template <typename T>
void for_each_param(Model<T>& model,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_params(model, fn, false);
}
template <typename T>
void for_each_param(const Model<T>& model,
                    const std::function<void(const std::string&, const Tensor<T>&)>& fn) {
  visit_params(model, fn, false);
}
template <typename T>
void for_each_state(Model<T>& model,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_params(model, fn, true);
}
template <typename T>
void for_each_state(const Model<T>& model,
                    const std::function<void(const std::string&, const Tensor<T>&)>& fn) {
  visit_params(model, fn, true);
}

template <typename T>
void for_each_conv_unit(Model<T>& model, const std::function<void(ConvBn<T>&)>& fn) {
  if (model.arch.kind == ArchKind::resnet) {
    fn(model.stem);
    for (auto& blk : model.blocks) {
      fn(blk.first);
      fn(blk.second);
      if (blk.projection) fn(*blk.projection);
    }
  } else {
    for (auto& u : model.chain) fn(u);
  }
}

template <typename T>
void for_each_conv_unit(const Model<T>& model,
                        const std::function<void(const ConvBn<T>&)>& fn) {
  for_each_conv_unit(const_cast<Model<T>&>(model),
                     std::function<void(ConvBn<T>&)>(
                         [&](ConvBn<T>& u) { fn(static_cast<const ConvBn<T>&>(u)); }));
}

template <typename T>
std::int64_t param_count(const Model<T>& model) {
  std::int64_t n = 0;
  for_each_param(model, std::function<void(const std::string&, const Tensor<T>&)>(
                            [&](const std::string&, const Tensor<T>& t) { n += t.numel(); }));
  return n;
}

template <typename T>
int weighted_layer_count(const Model<T>& model) {
  int n = 1;  // affine head
  if (model.arch.kind == ArchKind::resnet)
    n += 1 + 2 * static_cast<int>(model.blocks.size());
  else
    n += static_cast<int>(model.chain.size());
  return n;
}

template <typename T>
Model<T> grad_skeleton(const Model<T>& model) {
  Model<T> g = model;
  for_each_state(g, std::function<void(const std::string&, Tensor<T>&)>(
                        [](const std::string&, Tensor<T>& t) { t.fill(T{0}); }));
  return g;
}

#define ASFP_INSTANTIATE_MODEL(T)                                                         \
  template Model<T> build_plain_cnn<T>(const std::vector<int>&, std::array<int, 3>, int, \
                                       std::uint32_t);                                   \
  template Model<T> build_resnet<T>(int, const std::vector<int>&, std::array<int, 3>,    \
                                    int, std::uint32_t);                                 \
  template Model<T> build_model<T>(const ArchSpec&, std::uint32_t);                      \
  template Tensor<T> forward<T>(Model<T>&, const Tensor<T>&, ForwardCache<T>&);          \
  template Tensor<T> forward_eval<T>(const Model<T>&, const Tensor<T>&);                 \
  template Model<T> backward<T>(const Model<T>&, const ForwardCache<T>&,                 \
                                const Tensor<T>&);                                       \
  template Tensor<T> residual_add<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                     std::span<const int>);                              \
  template void for_each_param<T>(Model<T>&,                                             \
                                  const std::function<void(const std::string&,           \
                                                           Tensor<T>&)>&);               \
  template void for_each_param<T>(const Model<T>&,                                       \
                                  const std::function<void(const std::string&,           \
                                                           const Tensor<T>&)>&);         \
  template void for_each_state<T>(Model<T>&,                                             \
                                  const std::function<void(const std::string&,           \
                                                           Tensor<T>&)>&);               \
  template void for_each_state<T>(const Model<T>&,                                       \
                                  const std::function<void(const std::string&,           \
                                                           const Tensor<T>&)>&);         \
  template void for_each_conv_unit<T>(Model<T>&,                                         \
                                      const std::function<void(ConvBn<T>&)>&);           \
  template void for_each_conv_unit<T>(const Model<T>&,                                   \
                                      const std::function<void(const ConvBn<T>&)>&);     \
  template std::int64_t param_count<T>(const Model<T>&);                                 \
  template int weighted_layer_count<T>(const Model<T>&);                                 \
  template Model<T> grad_skeleton<T>(const Model<T>&);

ASFP_INSTANTIATE_MODEL(float)
ASFP_INSTANTIATE_MODEL(double)

#undef ASFP_INSTANTIATE_MODEL

}  // namespace asfp
