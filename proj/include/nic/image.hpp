#pragma once

// 8-bit RGB images, PNG/PPM IO and tensor conversion.

#include <cstdint>
#include <string>
#include <vector>

#include "nic/tensor.hpp"

namespace nic {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved RGB

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Format chosen by extension: .png or .ppm (binary P6, maxval 255).
Image read_image(const std::string& path);
void write_image(const Image& image, const std::string& path);

Image decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);

// [3, H, W] in 0..255 units.
template <typename T>
Tensor<T> to_tensor(const Image& image);

// Clamps to [0, 255] and rounds half away from zero.
template <typename T>
Image to_image(const Tensor<T>& x);

// Mirror padding (edge pixel not repeated) on the bottom/right up to the next
// multiple of `multiple` in each dimension.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t multiple);

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width);

// |a - b| per sample, scaled by `gain` and clamped, for visualization.
Image difference_image(const Image& a, const Image& b, double gain = 4.0);

}  // namespace nic
