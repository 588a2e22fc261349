#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tprune/tensor.hpp"

namespace tprune {

// One segmentation example: image [C,H,W] in [0,1], mask [1,H,W] in {0,1}.
struct DatasetPair {
  Tensor image;
  Tensor mask;
  std::string id;
};

using Dataset = std::vector<DatasetPair>;

// Synthetic "polyp" scenes: a textured background with one to three filled,
// rotated ellipses of a distinct colour and texture. The mask is the exact
// union of the ellipses, rasterised at pixel centres. Sample i draws from
// Rng::stream(seed, i), so the dataset is reproducible everywhere.
Dataset generate_blobs(int n, int height, int width, std::uint64_t seed);

// Reads `dir/images/<name>.ppm|.pgm` with `dir/masks/<name>.pgm`, sorted by
// name. Pixel values are scaled to [0,1]; masks are binarised at 128/255.
// A directory without any images yields an empty dataset and a warning.
Dataset load_pairs(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

// Inverse of load_pairs: 1-channel images become P5, 3-channel images P6.
void save_pairs(const std::filesystem::path& dir, std::span<const DatasetPair> pairs);

struct SplitSpec {
  double score = 0.5;
  double eval = 0.5;
  double train = 0.0;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset score;
  Dataset eval;
  Dataset train;
};

// Seeded shuffle, then contiguous score/eval/train partition. A split with a
// positive fraction that rounds to zero samples is an error.
Splits split(std::span<const DatasetPair> data, const SplitSpec& spec);

// Score-split sizes of the two importance-estimation regimes.
inline constexpr int kScoreSamplesSmall = 39;
inline constexpr int kScoreSamplesLarge = 235;

Tensor stack_images(std::span<const DatasetPair> pairs);
Tensor stack_masks(std::span<const DatasetPair> pairs);

}  // namespace tprune
