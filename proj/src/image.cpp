#include "graftnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "graftnet/error.hpp"
#include "graftnet/ops.hpp"

namespace graftnet {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::string token() {
    skip_space();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]) && bytes_[pos_] != '#') out += char(bytes_[pos_++]);
    if (out.empty()) fail("truncated header");
    return out;
  }

  std::size_t number() {
    const auto t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      fail("bad header field '" + t + "'");
    }
    if (t.size() > 9) fail("header field too large");
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing raster separator");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const { throw IoError(path_ + ": " + what); }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderReader reader(bytes, path);
  const auto magic = reader.token();
  std::size_t channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    reader.fail("unsupported format '" + magic + "' (expected P5 or P6)");
  const std::size_t width = reader.number(), height = reader.number(), maxval = reader.number();
  if (width == 0 || height == 0) reader.fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) reader.fail("maxval out of range");
  const std::size_t start = reader.raster_start();
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t count = width * height * channels;
  if (bytes.size() - start < count * sample_bytes) reader.fail("truncated raster");

  Image img(height, width, channels);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = bytes[start + i * sample_bytes];
    if (sample_bytes == 2) v = (v << 8) | bytes[start + i * 2 + 1];
    if (v > maxval) reader.fail("sample exceeds maxval");
    img.values[i] = double(v) / double(maxval);
  }
  return img;
}

void write_pnm(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw IoError(path + ": can only write 1 or 3 channel images");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raster(image.values.size());
  for (std::size_t i = 0; i < raster.size(); ++i) {
    raster[i] = static_cast<unsigned char>(std::lround(std::clamp(image.values[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raster.data()), std::streamsize(raster.size()));
  if (!out) throw IoError(path + ": write failed");
}

void write_pgm(const std::string& path, const GrayMap& map) {
  Image img(map.height, map.width, 1);
  img.values = map.values;
  write_pnm(path, img);
}

Image gray_to_rgb(const Image& gray) {
  if (gray.channels == 3) return gray;
  Image out(gray.height, gray.width, 3);
  for (std::size_t i = 0; i < gray.height * gray.width; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.values[i * 3 + c] = gray.values[i];
  return out;
}

GrayMap channel_map(const Image& image, std::size_t channel) {
  GrayMap m(image.height, image.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = image.values[i * image.channels + channel];
  return m;
}

Image resize_image(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  TapeScope<double> no_tape(nullptr);
  const std::size_t c = image.channels, hw = image.height * image.width;
  std::vector<double> planar(image.values.size());
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < c; ++k) planar[k * hw + i] = image.values[i * c + k];
  auto resized = bilinear_resize(Tensor<double>(Shape{1, c, image.height, image.width}, std::move(planar)), height,
                                 width);
  Image out(height, width, c);
  const std::size_t ohw = height * width;
  for (std::size_t i = 0; i < ohw; ++i)
    for (std::size_t k = 0; k < c; ++k) out.values[i * c + k] = resized[k * ohw + i];
  return out;
}

}  // namespace graftnet
