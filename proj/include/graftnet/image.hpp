#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "graftnet/metrics.hpp"

namespace graftnet {

/// Interleaved (HWC) image with values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  double at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * channels + c]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return values[(y * width + x) * channels + c]; }
};

/// Reads binary PGM (P5) or PPM (P6) with maxval up to 65535. Throws IoError
/// naming the file on any malformed input.
Image read_pnm(const std::string& path);

/// 8-bit P5 for one channel, P6 for three. Values are rounded from [0,1].
void write_pnm(const std::string& path, const Image& image);
void write_pgm(const std::string& path, const GrayMap& map);

Image gray_to_rgb(const Image& gray);
GrayMap channel_map(const Image& image, std::size_t channel);

/// Bilinear resize, align_corners = false.
Image resize_image(const Image& image, std::size_t height, std::size_t width);

}  // namespace graftnet
