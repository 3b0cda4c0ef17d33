#pragma once

// Image <-> bitstream pipelines and the bitstream container (format BS-1,
// see docs/FORMAT.md).

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nic/codec_model.hpp"
#include "nic/image.hpp"
#include "nic/random.hpp"
#include "nic/range_coder.hpp"

namespace nic {

inline constexpr std::uint8_t kBitstreamFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 27;
inline constexpr int kMaxLambdaIndex = 3;

struct BitstreamHeader {
  std::uint8_t format_version = kBitstreamFormatVersion;
  std::uint8_t codec_version = 1;  // t: which embedded codec produced the payload
  std::uint8_t lambda_index = 0;
  std::uint64_t model_hash = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t payload_len = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

std::array<std::uint8_t, kHeaderBytes> serialize_header(const BitstreamHeader& header);
// Validates magic, format version, t and lambda_index.
BitstreamHeader parse_header(std::span<const std::uint8_t> bytes);

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;

  std::size_t total_bytes() const noexcept { return kHeaderBytes + payload.size(); }
  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& b);
// Also rejects a payload_len that disagrees with the bytes present.
Bitstream parse_bitstream(std::span<const std::uint8_t> bytes);

// Nearest integer, ties away from zero.
template <typename T>
SymbolGrid quantize(const Tensor<T>& z);

template <typename T>
Tensor<T> symbols_to_tensor(const SymbolGrid& q);

// z + u with u ~ U[-1/2, 1/2) drawn in element order.
template <typename T>
Tensor<T> add_uniform_noise(const Tensor<T>& z, Rng& rng);

// Clamps every symbol into its channel's table support.
void clamp_to_support(SymbolGrid& q, const PmfTable& tables);

struct EncodeResult {
  Bitstream bitstream;
  SymbolGrid symbols;
  Image reconstruction;  // what any decoder will produce from the bitstream
  double estimated_bits = 0.0;  // rate_bits of the quantized latent under the continuous density
};

EncodeResult encode_image(const Image& image, const CodecModel<float>& model, int use_version);

struct DecodeOptions {
  // Experiment mode: skip the model hash check and decode leniently, so a
  // bitstream can be pushed through an incompatible decoder on purpose.
  bool bypass_hash_check = false;
};

Image decode_image(const Bitstream& bitstream, const CodecModel<float>& model, DecodeOptions options = {});

// Shared tail of encoder and decoder: symbols -> cropped 8-bit image.
Image reconstruct(const SymbolGrid& q, const CodecModel<float>& model, int use_version, std::size_t height,
                  std::size_t width);

}  // namespace nic
