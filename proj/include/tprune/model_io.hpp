#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "tprune/model.hpp"

namespace tprune {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kWeightsFile = "weights.bin";

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

// Checksum over the graph description and the weight blob. Provenance is
// excluded so identical weights always share a fingerprint.
std::uint64_t fingerprint(const Model& model);

// Writes `dir/manifest.json` and `dir/weights.bin` (little-endian f32, conv
// layers in graph order, weight then bias).
void save_model(const Model& model, const std::filesystem::path& dir);

// Errors: kVersion for an unknown format version, kFormat for a malformed
// manifest or a truncated blob, kChecksum when the blob hash does not match.
Model load_model(const std::filesystem::path& dir);

}  // namespace tprune
