#include "asfp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

namespace asfp {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'S', 'F', 'P', 'C', 'K', 'P', '1'};

struct ParamEntry {
  std::vector<int> shape;
  std::int64_t offset = 0;  // in elements
};

}  // namespace

void save_checkpoint(const Model<float>& model, const MaskState* mask,
                     const std::string& path) {
  json manifest;
  manifest["format"] = "asfp-checkpoint";
  manifest["version"] = 1;
  manifest["arch"] = json::parse(arch_to_json(model.arch));
  manifest["dtype"] = "float32";

  json params = json::array();
  std::int64_t offset = 0;
  std::vector<const Tensor<float>*> order;
  for_each_state(model, std::function<void(const std::string&, const Tensor<float>&)>(
                            [&](const std::string& name, const Tensor<float>& t) {
                              params.push_back({{"name", name},
                                                {"shape", t.shape()},
                                                {"offset", offset}});
                              order.push_back(&t);
                              offset += t.numel();
                            }));
  manifest["params"] = std::move(params);

  json keep = json::object();
  for (const auto& blk : model.blocks)
    if (!blk.merge_keep.empty()) keep[blk.second.conv.id] = blk.merge_keep;
  if (!keep.empty()) manifest["merge_keep"] = std::move(keep);

  if (mask && !mask->empty()) manifest["mask"] = json::parse(mask_to_json(*mask));

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  unsigned char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor<float>* t : order)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->numel() * sizeof(float)));
  if (!out) throw format_error("checkpoint: write to " + path + " failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("checkpoint: cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t file_size = in.tellg();
  in.seekg(0, std::ios::beg);

  char magic[8];
  unsigned char len_bytes[8];
  if (file_size < 16 || !in.read(magic, 8) ||
      !in.read(reinterpret_cast<char*>(len_bytes), 8))
    throw format_error("checkpoint: " + path + " is too short");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw format_error("checkpoint: " + path + " has wrong magic");
  std::uint64_t manifest_len = 0;
  for (int i = 7; i >= 0; --i) manifest_len = (manifest_len << 8) | len_bytes[i];
  if (static_cast<std::int64_t>(16 + manifest_len) > file_size)
    throw format_error("checkpoint: manifest length exceeds file size");

  std::string text(manifest_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_len)))
    throw format_error("checkpoint: short manifest read");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("checkpoint: corrupt manifest: ") + e.what());
  }

  LoadedCheckpoint result;
  try {
    if (manifest.at("dtype").get<std::string>() != "float32")
      throw format_error("checkpoint: unsupported dtype");
    const ArchSpec arch = parse_arch_json(manifest.at("arch").dump());
    result.model = build_model<float>(arch, 0);

    std::map<std::string, ParamEntry> entries;
    std::int64_t total_elems = 0;
    for (const auto& p : manifest.at("params")) {
      ParamEntry e;
      e.shape = p.at("shape").get<std::vector<int>>();
      e.offset = p.at("offset").get<std::int64_t>();
      std::int64_t n = 1;
      for (int d : e.shape) n *= d;
      total_elems += n;
      if (!entries.emplace(p.at("name").get<std::string>(), std::move(e)).second)
        throw format_error("checkpoint: duplicate parameter name");
    }

    const std::int64_t blob_bytes =
        file_size - 16 - static_cast<std::int64_t>(manifest_len);
    if (blob_bytes != total_elems * static_cast<std::int64_t>(sizeof(float)))
      throw format_error("checkpoint: blob holds " + std::to_string(blob_bytes) +
                         " bytes but manifest describes " +
                         std::to_string(total_elems * sizeof(float)));

    // Resize state tensors to manifest shapes (compact models store reduced
    // widths), then repair the per-layer bookkeeping from those shapes.
    std::set<std::string> seen;
    for_each_state(result.model,
                   std::function<void(const std::string&, Tensor<float>&)>(
                       [&](const std::string& name, Tensor<float>& t) {
                         auto it = entries.find(name);
                         if (it == entries.end())
                           throw format_error("checkpoint: missing parameter " + name);
                         seen.insert(name);
                         if (t.shape() != it->second.shape)
                           t = Tensor<float>(it->second.shape);
                       }));
    if (seen.size() != entries.size())
      throw format_error("checkpoint: manifest has parameters the model does not");

    for_each_conv_unit(result.model,
                       std::function<void(ConvBn<float>&)>([&](ConvBn<float>& u) {
                         u.conv.out_channels = u.conv.weight.extent(0);
                         u.conv.in_channels = u.conv.weight.extent(1);
                         u.conv.kernel = u.conv.weight.extent(2);
                         u.bn.channels = u.bn.gamma.extent(0);
                       }));
    if (manifest.contains("merge_keep")) {
      for (auto& blk : result.model.blocks) {
        if (manifest["merge_keep"].contains(blk.second.conv.id)) {
          blk.merge_keep =
              manifest["merge_keep"][blk.second.conv.id].get<std::vector<int>>();
          if (static_cast<int>(blk.merge_keep.size()) != blk.second.conv.out_channels)
            throw format_error("checkpoint: merge_keep size does not match conv width for " +
                               blk.second.conv.id);
        }
      }
    }

    for_each_state(result.model,
                   std::function<void(const std::string&, Tensor<float>&)>(
                       [&](const std::string& name, Tensor<float>& t) {
                         const ParamEntry& e = entries.at(name);
                         in.seekg(static_cast<std::streamoff>(
                                      16 + manifest_len +
                                      static_cast<std::uint64_t>(e.offset) * sizeof(float)),
                                  std::ios::beg);
                         if (!in.read(reinterpret_cast<char*>(t.data()),
                                      static_cast<std::streamsize>(t.numel() * sizeof(float))))
                           throw format_error("checkpoint: truncated blob while reading " +
                                              name);
                       }));

    if (manifest.contains("mask"))
      result.mask = mask_from_json(manifest["mask"].dump());
  } catch (const json::exception& e) {
    throw format_error(std::string("checkpoint: corrupt manifest: ") + e.what());
  }
  ++result.model.revision;
  return result;
}

}  // namespace asfp
