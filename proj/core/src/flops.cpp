#include "asfp/flops.hpp"

#include <algorithm>
#include <cstdio>

#include "json.hpp"

namespace asfp {

namespace {

struct LayerMacs {
  std::string id;
  std::int64_t macs = 0;
};

int conv_out_extent(int extent, int pad, int kernel, int stride) {
  return (extent + 2 * pad - kernel) / stride + 1;
}

template <typename T>
std::vector<LayerMacs> layer_macs(const Model<T>& model) {
  std::vector<LayerMacs> out;
  int h = model.arch.input[1];
  int w = model.arch.input[2];
  auto conv_macs = [&](const ConvLayer<T>& c, int& ch, int& cw) {
    const int oh = conv_out_extent(ch, c.pad, c.kernel, c.stride);
    const int ow = conv_out_extent(cw, c.pad, c.kernel, c.stride);
    const std::int64_t macs = static_cast<std::int64_t>(c.out_channels) * c.in_channels *
                              c.kernel * c.kernel * oh * ow;
    ch = oh;
    cw = ow;
    return macs;
  };

  if (model.arch.kind == ArchKind::resnet) {
    out.push_back({model.stem.conv.id, conv_macs(model.stem.conv, h, w)});
    for (const auto& blk : model.blocks) {
      int bh = h, bw = w;
      out.push_back({blk.first.conv.id, conv_macs(blk.first.conv, bh, bw)});
      int dummy_h = bh, dummy_w = bw;
      out.push_back({blk.second.conv.id, conv_macs(blk.second.conv, dummy_h, dummy_w)});
      if (blk.projection) {
        int ph = h, pw = w;
        out.push_back({blk.projection->conv.id, conv_macs(blk.projection->conv, ph, pw)});
      }
      h = bh;
      w = bw;
    }
  } else {
    for (std::size_t i = 0; i < model.chain.size(); ++i) {
      out.push_back({model.chain[i].conv.id, conv_macs(model.chain[i].conv, h, w)});
      if (model.pool_after[i]) {
        h = (h - 2) / 2 + 1;
        w = (w - 2) / 2 + 1;
      }
    }
  }
  out.push_back({model.head.id, static_cast<std::int64_t>(model.head.weight.extent(0)) *
                                    model.head.weight.extent(1)});
  return out;
}

FlopsReport assemble(const std::vector<LayerMacs>& base, const std::vector<LayerMacs>& pruned) {
  if (base.size() != pruned.size())
    throw state_error("count_flops: models have different layer counts");
  FlopsReport r;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i].id != pruned[i].id)
      throw state_error("count_flops: layer id mismatch at position " + std::to_string(i) +
                        ": " + base[i].id + " vs " + pruned[i].id);
    r.layers.push_back({base[i].id, base[i].macs, pruned[i].macs});
    r.total_baseline += base[i].macs;
    r.total_pruned += pruned[i].macs;
  }
  r.pruned_ratio =
      1.0 - static_cast<double>(r.total_pruned) / static_cast<double>(r.total_baseline);
  return r;
}

}  // namespace

template <typename T>
FlopsReport count_flops(const Model<T>& model) {
  const auto macs = layer_macs(model);
  return assemble(macs, macs);
}

template <typename T>
FlopsReport count_flops(const Model<T>& baseline, const Model<T>& pruned) {
  return assemble(layer_macs(baseline), layer_macs(pruned));
}

double layerwise_reduction(double p_this, double p_next) {
  if (!(p_this >= 0.0 && p_this < 1.0 && p_next >= 0.0 && p_next < 1.0))
    throw config_error("layerwise_reduction: rates must be in [0,1)");
  return 1.0 - (1.0 - p_next) * (1.0 - p_this);
}

std::string flops_to_text(const FlopsReport& report) {
  // MAC convention: one multiply-accumulate counts as one operation.
  std::string out = "layer            baseline_macs    pruned_macs      reduction\n";
  char line[160];
  for (const auto& l : report.layers) {
    const double red =
        l.baseline > 0 ? 1.0 - static_cast<double>(l.pruned) / static_cast<double>(l.baseline)
                       : 0.0;
    std::snprintf(line, sizeof(line), "%-16s %-16lld %-16lld %6.2f%%\n", l.id.c_str(),
                  static_cast<long long>(l.baseline), static_cast<long long>(l.pruned),
                  100.0 * red);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-16s %-16lld %-16lld %6.2f%%\n", "total",
                static_cast<long long>(report.total_baseline),
                static_cast<long long>(report.total_pruned), 100.0 * report.pruned_ratio);
  out += line;
  return out;
}

std::string flops_to_json(const FlopsReport& report) {
  nlohmann::json j;
  j["units"] = "macs";
  j["layers"] = nlohmann::json::array();
  for (const auto& l : report.layers)
    j["layers"].push_back({{"id", l.id}, {"baseline", l.baseline}, {"pruned", l.pruned}});
  j["total_baseline"] = report.total_baseline;
  j["total_pruned"] = report.total_pruned;
  j["pruned_ratio"] = report.pruned_ratio;
  return j.dump();
}

template FlopsReport count_flops<float>(const Model<float>&);
template FlopsReport count_flops<double>(const Model<double>&);
template FlopsReport count_flops<float>(const Model<float>&, const Model<float>&);
template FlopsReport count_flops<double>(const Model<double>&, const Model<double>&);

}  // namespace asfp
