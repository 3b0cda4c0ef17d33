#include "nic/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "nic/error.hpp"
#include "nic/hash.hpp"

namespace nic {

namespace fs = std::filesystem;

std::vector<std::string> DatasetManifest::files(Split split) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.file);
  }
  return out;
}

std::uint64_t DatasetManifest::fingerprint() const {
  Fnv1a h;
  for (const auto& e : entries) {
    h.update(e.file);
    h.update(std::string_view("\n", 1));
  }
  return h.digest();
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string key, value;
    fields >> key;
    std::getline(fields >> std::ws, value);
    if (value.empty()) throw FormatError("manifest " + path + ": line " + std::to_string(lineno) + " has no value", 0);
    if (key == "name") {
      m.name = value;
    } else if (key == "train" || key == "eval") {
      m.entries.push_back({value, key == "train" ? Split::train : Split::eval});
    } else {
      throw FormatError("manifest " + path + ": unknown key '" + key + "' on line " + std::to_string(lineno), 0);
    }
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create manifest " + path);
  out << "name " << manifest.name << "\n";
  for (const auto& e : manifest.entries) out << (e.split == Split::train ? "train " : "eval ") << e.file << "\n";
  if (!out) throw IoError("write failed: " + path);
}

std::vector<Image> load_split(const DatasetManifest& manifest, Split split) {
  std::set<std::string> train, eval;
  for (const auto& e : manifest.entries) (e.split == Split::train ? train : eval).insert(e.file);
  for (const auto& f : train) {
    if (eval.count(f)) throw ContractError("manifest lists " + f + " in both train and eval");
  }
  std::vector<Image> images;
  for (const auto& f : manifest.files(split)) images.push_back(read_image((fs::path(manifest.root) / f).string()));
  return images;
}

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "smooth") return SynthKind::smooth;
  if (text == "texture") return SynthKind::texture;
  throw ContractError("unknown synthetic domain '" + text + "' (smooth|texture)");
}

std::string to_string(SynthKind kind) { return kind == SynthKind::smooth ? "smooth" : "texture"; }

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

Image smooth_image(std::size_t size, Rng& rng) {
  struct Blob {
    double cy, cx, inv2s2, color[3];
  };
  const double base[3] = {rng.uniform(40, 215), rng.uniform(40, 215), rng.uniform(40, 215)};
  std::vector<Blob> blobs(4 + rng.below(4));
  const double s = static_cast<double>(size);
  for (auto& b : blobs) {
    b.cy = rng.uniform(-0.1, 1.1) * s;
    b.cx = rng.uniform(-0.1, 1.1) * s;
    const double sigma = rng.uniform(0.15, 0.4) * s;
    b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (double& c : b.color) c = rng.uniform(-90, 90);
  }
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double v[3] = {base[0], base[1], base[2]};
      for (const auto& b : blobs) {
        const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
        const double w = std::exp(-(dy * dy + dx * dx) * b.inv2s2);
        for (int c = 0; c < 3; ++c) v[c] += w * b.color[c];
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = to_byte(v[c]);
    }
  }
  return img;
}

Image texture_image(std::size_t size, Rng& rng) {
  struct Stripe {
    double ky, kx, phase, color[3];
  };
  std::vector<Stripe> stripes(2 + rng.below(2));
  for (auto& st : stripes) {
    const double angle = rng.uniform(0, std::numbers::pi);
    const double period = rng.uniform(2.5, 7.0);
    st.ky = 2 * std::numbers::pi / period * std::sin(angle);
    st.kx = 2 * std::numbers::pi / period * std::cos(angle);
    st.phase = rng.uniform(0, 2 * std::numbers::pi);
    for (double& c : st.color) c = rng.uniform(-60, 60);
  }
  const std::size_t cell = 2 + rng.below(5);
  const std::size_t oy = rng.below(cell), ox = rng.below(cell);
  double checker[3], base[3];
  for (double& c : checker) c = rng.uniform(-50, 50);
  for (double& c : base) c = rng.uniform(90, 165);
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double sign = (((y + oy) / cell + (x + ox) / cell) % 2 == 0) ? 1.0 : -1.0;
      double v[3] = {base[0] + sign * checker[0], base[1] + sign * checker[1], base[2] + sign * checker[2]};
      for (const auto& st : stripes) {
        const double w = std::sin(st.ky * static_cast<double>(y) + st.kx * static_cast<double>(x) + st.phase);
        for (int c = 0; c < 3; ++c) v[c] += w * st.color[c];
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = to_byte(v[c]);
    }
  }
  return img;
}

}  // namespace

std::vector<Image> synth_images(SynthKind kind, std::size_t n, std::size_t size, std::uint64_t seed) {
  if (n < 1) throw ContractError("synth: n must be >= 1");
  if (size == 0 || size % 16 != 0) throw ContractError("synth: size must be a positive multiple of 16");
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kind == SynthKind::smooth ? smooth_image(size, rng) : texture_image(size, rng));
  }
  return out;
}

DatasetManifest synth_domain(SynthKind kind, std::size_t n, std::size_t size, std::uint64_t seed,
                             const std::string& dir, std::size_t eval_count) {
  if (eval_count >= n) throw ContractError("synth: eval_count must leave at least one training image");
  const auto images = synth_images(kind, n, size, seed);
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = to_string(kind);
  m.root = dir;
  for (std::size_t i = 0; i < n; ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "%s_%04zu.png", m.name.c_str(), i);
    write_image(images[i], (fs::path(dir) / file).string());
    m.entries.push_back({file, i + eval_count >= n ? Split::eval : Split::train});
  }
  write_manifest(m, (fs::path(dir) / "manifest.txt").string());
  return m;
}

double mean_gradient_magnitude(const Image& image) {
  if (image.width < 2 || image.height < 2) return 0.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 1 < image.height; ++y) {
    for (std::size_t x = 0; x + 1 < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = image.at(y, x, c);
        const double gy = image.at(y + 1, x, c) - v, gx = image.at(y, x + 1, c) - v;
        acc += std::sqrt(gy * gy + gx * gx);
        ++n;
      }
    }
  }
  return acc / static_cast<double>(n);
}

std::vector<Tensor<float>> sample_patches(std::span<const Image> images, std::size_t patch, std::size_t count,
                                          Rng& rng, std::vector<PatchOrigin>* origins) {
  if (images.empty()) throw ContractError("sample_patches: no images");
  if (patch == 0) throw ContractError("sample_patches: patch must be positive");
  for (const auto& img : images) {
    if (patch > img.width || patch > img.height) {
      throw ContractError("sample_patches: patch " + std::to_string(patch) + " exceeds image " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
    }
  }
  std::vector<Tensor<float>> out;
  out.reserve(count);
  if (origins) origins->clear();
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t i = rng.below(images.size());
    const Image& img = images[i];
    const std::size_t y0 = rng.below(img.height - patch + 1), x0 = rng.below(img.width - patch + 1);
    if (origins) origins->push_back({i, y0, x0});
    Tensor<float> t({3, patch, patch});
    const std::size_t plane = patch * patch;
    for (std::size_t y = 0; y < patch; ++y) {
      for (std::size_t x = 0; x < patch; ++x) {
        for (std::size_t c = 0; c < 3; ++c) t[c * plane + y * patch + x] = img.at(y0 + y, x0 + x, c);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace nic
