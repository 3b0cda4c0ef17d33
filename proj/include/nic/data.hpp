#pragma once

// Datasets: manifests, synthetic two-domain generators, patch sampling.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nic/image.hpp"
#include "nic/random.hpp"
#include "nic/tensor.hpp"

namespace nic {

enum class Split : std::uint8_t { train, eval };

struct ManifestEntry {
  std::string file;  // relative to root
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Line-oriented text:
//   name <name>
//   train <file>
//   eval <file>
// Blank lines and lines starting with '#' are ignored. The root is the
// directory holding the manifest.
struct DatasetManifest {
  std::string name;
  std::string root;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> files(Split split) const;
  // FNV-1a over the ordered file list; split tags and root do not enter.
  std::uint64_t fingerprint() const;
};

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

// Loads and decodes every image of a split. Throws if a file is missing or
// undecodable, or if a file appears in both splits.
std::vector<Image> load_split(const DatasetManifest& manifest, Split split);

enum class SynthKind { smooth, texture };

SynthKind parse_synth_kind(const std::string& text);
std::string to_string(SynthKind kind);

// n images of size x size, deterministic per seed.
std::vector<Image> synth_images(SynthKind kind, std::size_t n, std::size_t size, std::uint64_t seed);

// Writes synth_images as PNGs plus manifest.txt into dir. The last
// eval_count images are tagged eval.
DatasetManifest synth_domain(SynthKind kind, std::size_t n, std::size_t size, std::uint64_t seed,
                             const std::string& dir, std::size_t eval_count);

// Mean forward-difference gradient magnitude sqrt(gx^2 + gy^2) over all
// channels and the pixels that have a right and a lower neighbour.
double mean_gradient_magnitude(const Image& image);

struct PatchOrigin {
  std::size_t image, y, x;
};

// Uniform random image choice and crop position; [3, patch, patch] tensors in
// 0..255 units.
std::vector<Tensor<float>> sample_patches(std::span<const Image> images, std::size_t patch, std::size_t count,
                                          Rng& rng, std::vector<PatchOrigin>* origins = nullptr);

}  // namespace nic
