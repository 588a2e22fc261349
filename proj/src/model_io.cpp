#include "tprune/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace tprune {
namespace {

using nlohmann::json;

static_assert(sizeof(float) == 4);

json graph_json(const Model& model) {
  json layers = json::array();
  for (const auto& node : model.layers()) {
    json j;
    j["id"] = node.id;
    j["kind"] = to_string(node.kind);
    j["inputs"] = node.inputs;
    j["out_shape"] = {node.channels, node.height, node.width};
    if (node.kind == LayerKind::kConv) {
      j["in_channels"] = node.in_channels;
      j["out_channels"] = node.channels;
      j["original_out_channels"] = node.original_out_channels;
      j["pruned_channels"] = node.original_out_channels - node.channels;
      j["kernel"] = node.kernel;
      j["stride"] = node.stride;
      j["pad"] = node.pad;
      j["prunable"] = node.prunable;
    }
    layers.push_back(std::move(j));
  }
  return layers;
}

std::vector<std::uint8_t> weight_blob(const Model& model) {
  std::vector<std::uint8_t> blob;
  blob.reserve(static_cast<std::size_t>(count_params(model)) * 4);
  auto put = [&](const Tensor& t) {
    for (float v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  };
  for (const auto& node : model.layers()) {
    if (node.kind != LayerKind::kConv) continue;
    put(node.weight);
    put(node.bias);
  }
  return blob;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

template <typename V>
V get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorCode::kFormat, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, where + ": bad field '" + key + "': " + e.what());
  }
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t fingerprint(const Model& model) {
  const std::string graph = graph_json(model).dump();
  const auto blob = weight_blob(model);
  return fnv1a64(blob, fnv1a64(as_bytes(graph)));
}

void save_model(const Model& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create model directory " + dir.string() + ": " + ec.message());
  const auto blob = weight_blob(model);
  const json graph = graph_json(model);

  json manifest;
  manifest["format"] = "tprune-model";
  manifest["format_version"] = kModelFormatVersion;
  manifest["provenance"] = model.provenance;
  manifest["layers"] = graph;
  manifest["prunable_channels"] = model.prunable_channel_count();
  manifest["parameters"] = count_params(model);
  manifest["weights"] = {{"file", kWeightsFile},
                         {"dtype", "f32le"},
                         {"count", blob.size() / 4},
                         {"checksum", hex64(fnv1a64(blob))}};
  manifest["fingerprint"] = hex64(fnv1a64(blob, fnv1a64(as_bytes(graph.dump()))));

  std::ofstream mf(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  mf << manifest.dump(2) << '\n';
  std::ofstream wf(dir / kWeightsFile, std::ios::binary | std::ios::trunc);
  wf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!mf || !wf) fail(ErrorCode::kIo, "failed writing model to " + dir.string());
}

Model load_model(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) fail(ErrorCode::kIo, "cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, manifest_path.string() + ": malformed manifest: " + e.what());
  }
  const std::string where = manifest_path.string();
  if (get<std::string>(manifest, "format", where) != "tprune-model") {
    fail(ErrorCode::kFormat, where + ": not a tprune model manifest");
  }
  const int version = get<int>(manifest, "format_version", where);
  if (version != kModelFormatVersion) {
    fail(ErrorCode::kVersion, where + ": unsupported format version " + std::to_string(version) + " (expected " +
                                  std::to_string(kModelFormatVersion) + ")");
  }
  const json& weights = manifest.at("weights");
  const auto count = get<std::uint64_t>(weights, "count", where);
  const auto checksum = get<std::string>(weights, "checksum", where);

  const auto blob_path = dir / get<std::string>(weights, "file", where);
  std::ifstream wf(blob_path, std::ios::binary);
  if (!wf) fail(ErrorCode::kIo, "cannot open " + blob_path.string());
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());
  if (blob.size() != count * 4) {
    fail(ErrorCode::kFormat, blob_path.string() + ": truncated or oversized weight blob (" +
                                 std::to_string(blob.size()) + " bytes, expected " + std::to_string(count * 4) + ")");
  }
  if (hex64(fnv1a64(blob)) != checksum) {
    fail(ErrorCode::kChecksum, blob_path.string() + ": checksum mismatch (blob corrupted)");
  }

  Model model;
  model.provenance = manifest.value("provenance", "");
  std::size_t cursor = 0;
  auto take = [&](Shape shape) {
    Tensor t(std::move(shape));
    if (cursor + t.numel() * 4 > blob.size()) fail(ErrorCode::kFormat, where + ": layers exceed weight blob");
    for (float& v : t.data()) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{blob[cursor++]} << (8 * b);
      v = std::bit_cast<float>(bits);
    }
    return t;
  };
  for (const auto& j : get<json>(manifest, "layers", where)) {
    LayerNode node;
    node.id = get<std::string>(j, "id", where);
    const std::string lw = where + " layer '" + node.id + "'";
    node.kind = layer_kind_from_string(get<std::string>(j, "kind", lw));
    node.inputs = get<std::vector<int>>(j, "inputs", lw);
    const auto shape = get<std::vector<int>>(j, "out_shape", lw);
    if (shape.size() != 3) fail(ErrorCode::kFormat, lw + ": out_shape must have 3 entries");
    node.channels = shape[0];
    node.height = shape[1];
    node.width = shape[2];
    if (node.kind == LayerKind::kConv) {
      node.in_channels = get<int>(j, "in_channels", lw);
      node.original_out_channels = get<int>(j, "original_out_channels", lw);
      node.kernel = get<int>(j, "kernel", lw);
      node.stride = get<int>(j, "stride", lw);
      node.pad = get<int>(j, "pad", lw);
      node.prunable = get<bool>(j, "prunable", lw);
      const int out = get<int>(j, "out_channels", lw);
      if (out < 1 || node.in_channels < 1 || node.kernel < 1) fail(ErrorCode::kFormat, lw + ": bad conv dims");
      node.weight = take({out, node.in_channels, node.kernel, node.kernel});
      node.bias = take({out});
    }
    model.mutable_layers().push_back(std::move(node));
  }
  if (cursor != blob.size()) fail(ErrorCode::kFormat, where + ": weight blob has trailing data");
  if (model.empty() || model.layers().front().kind != LayerKind::kInput) {
    fail(ErrorCode::kFormat, where + ": first layer must be the input");
  }
  try {
    model.refresh_geometry();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, where + ": inconsistent graph: " + e.what());
  }
  return model;
}

}  // namespace tprune
