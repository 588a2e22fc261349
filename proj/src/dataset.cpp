#include "tprune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "tprune/pnm.hpp"
#include "tprune/rng.hpp"

namespace tprune {
namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0 + 1e-9;
  }
};

struct Texture {
  double fx[3], fy[3], phase[3], amp[3];

  static Texture draw(Rng& rng, double min_freq, double max_freq, double amplitude) {
    Texture t{};
    for (int i = 0; i < 3; ++i) {
      t.fx[i] = rng.uniform(min_freq, max_freq) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      t.fy[i] = rng.uniform(min_freq, max_freq);
      t.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      t.amp[i] = amplitude * rng.uniform(0.5, 1.0);
    }
    return t;
  }

  double at(double x, double y) const {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += amp[i] * std::sin(fx[i] * x + fy[i] * y + phase[i]);
    return v;
  }
};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "blob_%05d", index);
  return buf;
}

}  // namespace

Dataset generate_blobs(int n, int height, int width, std::uint64_t seed) {
  if (n < 1) fail(ErrorCode::kInvalidArgument, "generate_blobs: n must be >= 1");
  if (height < 32 || width < 32) fail(ErrorCode::kInvalidArgument, "generate_blobs: height and width must be >= 32");
  const double size = std::min(height, width);
  Dataset out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    const double bg[3] = {rng.uniform(0.45, 0.6), rng.uniform(0.22, 0.35), rng.uniform(0.18, 0.3)};
    const double fg[3] = {rng.uniform(0.8, 0.92), rng.uniform(0.55, 0.7), rng.uniform(0.45, 0.6)};
    const Texture bg_tex = Texture::draw(rng, 0.05, 0.25, 0.05);
    const Texture fg_tex = Texture::draw(rng, 0.4, 0.9, 0.04);

    const int count = 1 + static_cast<int>(rng.below(3));
    std::vector<Ellipse> blobs;
    for (int e = 0; e < count; ++e) {
      // Centres sit on pixel centres so every blob covers at least one pixel.
      const double cx = std::floor(rng.uniform(0.2, 0.8) * width) + 0.5;
      const double cy = std::floor(rng.uniform(0.2, 0.8) * height) + 0.5;
      const double a = rng.uniform(0.08, 0.2) * size;
      const double b = rng.uniform(0.08, 0.2) * size;
      const double theta = rng.uniform(0.0, std::numbers::pi);
      blobs.push_back({cx, cy, a, b, std::cos(theta), std::sin(theta)});
    }

    DatasetPair pair{Tensor({3, height, width}), Tensor({1, height, width}), sample_id(i)};
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        const bool inside = std::any_of(blobs.begin(), blobs.end(), [&](const Ellipse& e) { return e.contains(px, py); });
        const std::size_t idx = static_cast<std::size_t>(y) * width + x;
        const double tex = inside ? fg_tex.at(px, py) : bg_tex.at(px, py);
        const double* base = inside ? fg : bg;
        for (int c = 0; c < 3; ++c) {
          const double noise = rng.uniform(-0.03, 0.03);
          pair.image[c * plane + idx] = clamp01(base[c] + tex * (1.0 - 0.2 * c) + noise);
        }
        pair.mask[idx] = inside ? 1.0f : 0.0f;
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

Dataset load_pairs(const std::filesystem::path& dir, std::vector<std::string>* warnings) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "dataset directory " + dir.string() + " does not exist");
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  const fs::path images_dir = dir / "images";
  const fs::path masks_dir = dir / "masks";
  std::map<std::string, fs::path> images, masks;
  auto scan = [](const fs::path& d, std::map<std::string, fs::path>& into, bool allow_ppm) {
    if (!fs::is_directory(d)) return;
    for (const auto& entry : fs::directory_iterator(d)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || (allow_ppm && ext == ".ppm")) into[entry.path().stem().string()] = entry.path();
    }
  };
  scan(images_dir, images, true);
  scan(masks_dir, masks, false);
  if (images.empty() && masks.empty()) {
    warn("no image/mask pairs found under " + dir.string());
    return {};
  }
  for (const auto& [name, path] : images) {
    if (!masks.count(name)) fail(ErrorCode::kMissingCounterpart, path.string() + ": no matching mask " + name + ".pgm");
  }
  for (const auto& [name, path] : masks) {
    if (!images.count(name)) fail(ErrorCode::kMissingCounterpart, path.string() + ": no matching image for " + name);
  }

  Dataset out;
  for (const auto& [name, image_path] : images) {
    const Pixmap img = read_pnm(image_path);
    const Pixmap msk = read_pnm(masks.at(name));
    if (msk.channels != 1) fail(ErrorCode::kFormat, masks.at(name).string() + ": masks must be P5 graymaps");
    if (img.width != msk.width || img.height != msk.height) {
      fail(ErrorCode::kShape, masks.at(name).string() + ": mask size differs from image " + image_path.string());
    }
    DatasetPair pair{Tensor({img.channels, img.height, img.width}), Tensor({1, img.height, img.width}), name};
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < img.channels; ++c) {
        pair.image[c * plane + p] = static_cast<float>(img.pixels[p * img.channels + c]) / static_cast<float>(img.maxval);
      }
      pair.mask[p] = msk.pixels[p] * 255 >= 128 * msk.maxval ? 1.0f : 0.0f;
    }
    out.push_back(std::move(pair));
  }
  return out;
}

void save_pairs(const std::filesystem::path& dir, std::span<const DatasetPair> pairs) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create dataset directory " + dir.string() + ": " + ec.message());
  auto quantize = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (const auto& pair : pairs) {
    const int c = static_cast<int>(pair.image.dim(0));
    if (c != 1 && c != 3) fail(ErrorCode::kInvalidArgument, pair.id + ": only 1- or 3-channel images can be exported");
    Pixmap img{static_cast<int>(pair.image.dim(2)), static_cast<int>(pair.image.dim(1)), c, 255, {}};
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    img.pixels.resize(plane * c);
    for (std::size_t p = 0; p < plane; ++p) {
      for (int k = 0; k < c; ++k) img.pixels[p * c + k] = quantize(pair.image[k * plane + p]);
    }
    Pixmap msk{img.width, img.height, 1, 255, std::vector<std::uint8_t>(plane)};
    for (std::size_t p = 0; p < plane; ++p) msk.pixels[p] = pair.mask[p] > 0.5f ? 255 : 0;
    write_pnm(dir / "images" / (pair.id + (c == 3 ? ".ppm" : ".pgm")), img);
    write_pnm(dir / "masks" / (pair.id + ".pgm"), msk);
  }
}

Splits split(std::span<const DatasetPair> data, const SplitSpec& spec) {
  const double fractions[3] = {spec.score, spec.eval, spec.train};
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) fail(ErrorCode::kInvalidArgument, "split fractions must lie in [0,1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(ErrorCode::kInvalidArgument, "split fractions must sum to 1");

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(spec.seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  const auto n = static_cast<std::int64_t>(data.size());
  const std::int64_t n_score = std::llround(spec.score * static_cast<double>(n));
  const std::int64_t n_eval = std::llround(spec.eval * static_cast<double>(n));
  const std::int64_t n_train = n - n_score - n_eval;
  const std::int64_t sizes[3] = {n_score, n_eval, n_train};
  const char* names[3] = {"score", "eval", "train"};
  for (int k = 0; k < 3; ++k) {
    if (sizes[k] < 0 || (fractions[k] > 0.0 && sizes[k] == 0)) {
      fail(ErrorCode::kInvalidArgument, std::string("split: ") + names[k] + " split would be empty for " +
                                            std::to_string(n) + " samples");
    }
  }
  Splits out;
  Dataset* targets[3] = {&out.score, &out.eval, &out.train};
  std::size_t cursor = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::int64_t j = 0; j < sizes[k]; ++j) targets[k]->push_back(data[order[cursor++]]);
  }
  return out;
}

namespace {
Tensor stack(std::span<const DatasetPair> pairs, bool masks) {
  if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "cannot stack an empty set of samples");
  const Tensor& first = masks ? pairs[0].mask : pairs[0].image;
  Shape shape{static_cast<std::int64_t>(pairs.size()), first.dim(0), first.dim(1), first.dim(2)};
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(shape_numel(shape)));
  for (const auto& p : pairs) {
    const Tensor& t = masks ? p.mask : p.image;
    if (t.shape() != first.shape()) {
      fail(ErrorCode::kShape, p.id + ": sample shape " + shape_str(t.shape()) + " differs from " +
                                  shape_str(first.shape()));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}
}  // namespace

Tensor stack_images(std::span<const DatasetPair> pairs) { return stack(pairs, false); }
Tensor stack_masks(std::span<const DatasetPair> pairs) { return stack(pairs, true); }

}  // namespace tprune
