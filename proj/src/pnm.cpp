#include "tprune/pnm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "tprune/error.hpp"

namespace tprune {
namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) bad("expected an integer");
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > 1 << 20) bad("header value too large");
    }
    return static_cast<int>(value);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) bad("missing whitespace before pixel data");
    return pos_ + 1;
  }

  [[noreturn]] void bad(const std::string& why) const { fail(ErrorCode::kFormat, path_.string() + ": malformed header: " + why); }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::filesystem::path& path_;
};

}  // namespace

Pixmap read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderReader header(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    header.bad("expected binary P5 or P6 magic");
  }
  Pixmap img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  img.width = header.next_int();
  img.height = header.next_int();
  const int maxval = header.next_int();
  if (img.width < 1 || img.height < 1) header.bad("image dimensions must be positive");
  if (maxval < 1) header.bad("maxval must be positive");
  if (maxval > 255) {
    fail(ErrorCode::kUnsupportedDepth, path.string() + ": only 8-bit images are supported (maxval " +
                                           std::to_string(maxval) + ")");
  }
  const std::size_t start = header.raster_start();
  const std::size_t expected = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() < start + expected) {
    fail(ErrorCode::kFormat, path.string() + ": pixel data truncated (" + std::to_string(bytes.size() - start) +
                                 " of " + std::to_string(expected) + " bytes)");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + expected));
  img.maxval = maxval;
  return img;
}

void write_pnm(const std::filesystem::path& path, const Pixmap& image) {
  if (image.channels != 1 && image.channels != 3) fail(ErrorCode::kInvalidArgument, "PNM supports 1 or 3 channels");
  if (image.maxval < 1 || image.maxval > 255) fail(ErrorCode::kUnsupportedDepth, "PNM maxval must be in [1, 255]");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    fail(ErrorCode::kInvalidArgument, "pixel buffer does not match image dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace tprune
