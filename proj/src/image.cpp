#include "nic/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "nic/bytes.hpp"
#include "nic/error.hpp"

namespace nic {
namespace {

std::string extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return {};
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError("cannot read PNG " + path + ": " + png.message, 0);
  }
  png.format = PNG_FORMAT_RGB;
  Image image(png.width, png.height);
  if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError("cannot decode PNG " + path + ": " + png.message, 0);
  }
  return image;
}

void write_png(const Image& image, const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + png.message);
  }
}

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    const std::size_t at = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 20)) throw FormatError("PPM header value too large", at);
    }
    if (pos == at) throw FormatError("PPM header: expected a number", at);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary PPM (P6)", 0);
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw FormatError("only 8-bit PPM (maxval 255) is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PPM header not terminated", pos);
  ++pos;
  Image image(w, h);
  if (bytes.size() - pos < image.rgb.size()) throw FormatError("PPM pixel data truncated", bytes.size());
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), image.rgb.size(), image.rgb.begin());
  return image;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

Image read_image(const std::string& path) {
  const std::string ext = extension(path);
  Image image;
  if (ext == "png") {
    image = read_png(path);
  } else if (ext == "ppm") {
    image = decode_ppm(read_file(path));
  } else {
    throw IoError("unsupported image extension: " + path);
  }
  if (image.empty()) throw FormatError("image " + path + " has a zero dimension", 0);
  return image;
}

void write_image(const Image& image, const std::string& path) {
  const std::string ext = extension(path);
  if (ext == "png") {
    write_png(image, path);
  } else if (ext == "ppm") {
    write_file(path, encode_ppm(image));
  } else {
    throw IoError("unsupported image extension: " + path);
  }
}

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  const std::size_t plane = image.width * image.height;
  Tensor<T> x({3, image.height, image.width});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) x[c * plane + i] = static_cast<T>(image.rgb[i * 3 + c]);
  }
  return x;
}

template <typename T>
Image to_image(const Tensor<T>& x) {
  require_shape(x.rank() == 3 && x.dim(0) == 3, "to_image: expected [3, H, W], got " + shape_string(x.shape()));
  Image image(x.dim(2), x.dim(1));
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(x[c * plane + i]), 0.0, 255.0);
      image.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::round(v));
    }
  }
  return image;
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, std::size_t multiple) {
  require_shape(x.rank() == 3, "reflect_pad: expected [C, H, W], got " + shape_string(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require_shape(H > 0 && W > 0, "reflect_pad: empty image");
  const std::size_t Hp = (H + multiple - 1) / multiple * multiple;
  const std::size_t Wp = (W + multiple - 1) / multiple * multiple;
  if (Hp == H && Wp == W) return x;
  Tensor<T> out({C, Hp, Wp});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < Hp; ++y) {
      const std::size_t sy = mirror(static_cast<std::ptrdiff_t>(y), H);
      for (std::size_t xx = 0; xx < Wp; ++xx) {
        out[(c * Hp + y) * Wp + xx] = x[(c * H + sy) * W + mirror(static_cast<std::ptrdiff_t>(xx), W)];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t height, std::size_t width) {
  require_shape(x.rank() == 3 && x.dim(1) >= height && x.dim(2) >= width,
                "crop: cannot crop " + shape_string(x.shape()) + " to " + std::to_string(height) + "x" +
                    std::to_string(width));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == height && W == width) return x;
  Tensor<T> out({C, height, width});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      std::copy_n(x.data() + (c * H + y) * W, width, out.data() + (c * height + y) * width);
    }
  }
  return out;
}

Image difference_image(const Image& a, const Image& b, double gain) {
  if (a.width != b.width || a.height != b.height) throw ContractError("difference_image: size mismatch");
  Image out(a.width, a.height);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = std::abs(static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i])) * gain;
    out.rgb[i] = static_cast<std::uint8_t>(std::min(255.0, std::round(d)));
  }
  return out;
}

template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template Image to_image<float>(const Tensor<float>&);
template Image to_image<double>(const Tensor<double>&);
template Tensor<float> reflect_pad<float>(const Tensor<float>&, std::size_t);
template Tensor<double> reflect_pad<double>(const Tensor<double>&, std::size_t);
template Tensor<float> crop<float>(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> crop<double>(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace nic
