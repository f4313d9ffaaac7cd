#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/rect.hpp"
#include "fsnet/tensor.hpp"

namespace fsnet {

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(w * h * 3, fill) {}

  ImageSize size() const { return {width, height}; }
  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
};

/// Planar 1 x 3 x H x W tensor of mean-subtracted pixels, p - 128, on the 0..255 scale.
inline Tensor<double> to_tensor(const Image& img) {
  if (img.rgb.size() != img.width * img.height * 3) {
    throw ShapeError("image buffer holds " + std::to_string(img.rgb.size()) + " bytes, expected " +
                     std::to_string(img.width * img.height * 3));
  }
  Tensor<double> t(Shape{1, 3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto* p = img.pixel(x, y);
      for (std::size_t c = 0; c < 3; ++c) t(0, c, y, x) = static_cast<double>(p[c]) - 128.0;
    }
  }
  return t;
}

}  // namespace fsnet
