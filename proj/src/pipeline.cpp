#include "nic/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nic/bytes.hpp"
#include "nic/error.hpp"

namespace nic {
namespace {

constexpr char kMagic[] = "DANb";

const PmfTable& tables_for(const CodecModel<float>& model, int use_version) {
  const auto& t = model.tables.at(static_cast<std::size_t>(use_version - 1));
  if (t.empty()) {
    throw ContractError("model has no frozen PMF tables for version " + std::to_string(use_version));
  }
  return t;
}

}  // namespace

std::array<std::uint8_t, kHeaderBytes> serialize_header(const BitstreamHeader& h) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(h.format_version);
  w.u8(h.codec_version);
  w.u8(h.lambda_index);
  w.u64(h.model_hash);
  w.u32(h.width);
  w.u32(h.height);
  w.u32(h.payload_len);
  std::array<std::uint8_t, kHeaderBytes> out{};
  std::copy(w.bytes().begin(), w.bytes().end(), out.begin());
  return out;
}

BitstreamHeader parse_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.text(4) != std::string_view(kMagic, 4)) r.fail_at("bad bitstream magic", 0);
  BitstreamHeader h;
  h.format_version = r.u8();
  if (h.format_version != kBitstreamFormatVersion) {
    r.fail_at("unsupported bitstream format version " + std::to_string(h.format_version), 4);
  }
  h.codec_version = r.u8();
  if (h.codec_version < 1 || h.codec_version > 2) {
    r.fail_at("codec version t = " + std::to_string(h.codec_version) + " not in {1, 2}", 5);
  }
  h.lambda_index = r.u8();
  if (h.lambda_index > kMaxLambdaIndex) r.fail_at("lambda index out of range", 6);
  h.model_hash = r.u64();
  h.width = r.u32();
  h.height = r.u32();
  if (h.width == 0 || h.height == 0) r.fail_at("zero image dimension", 15);
  h.payload_len = r.u32();
  return h;
}

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& b) {
  if (b.header.payload_len != b.payload.size()) throw ContractError("payload_len does not match payload size");
  const auto header = serialize_header(b.header);
  std::vector<std::uint8_t> out(kHeaderBytes + b.payload.size());
  std::copy(header.begin(), header.end(), out.begin());
  std::copy(b.payload.begin(), b.payload.end(), out.begin() + kHeaderBytes);
  return out;
}

Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  Bitstream b;
  b.header = parse_header(bytes);
  const std::size_t have = bytes.size() < kHeaderBytes ? 0 : bytes.size() - kHeaderBytes;
  if (have != b.header.payload_len) {
    throw FormatError("payload_len " + std::to_string(b.header.payload_len) + " but " + std::to_string(have) +
                          " payload bytes present",
                      kHeaderBytes - 4);
  }
  b.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return b;
}

template <typename T>
SymbolGrid quantize(const Tensor<T>& z) {
  require_shape(z.rank() == 3, "quantize: expected [C, h, w], got " + shape_string(z.shape()));
  if (!z.all_finite()) throw ValueError("quantize: non-finite latent");
  SymbolGrid q(z.dim(0), z.dim(1), z.dim(2));
  constexpr double kLimit = 1 << 30;
  for (std::size_t i = 0; i < z.size(); ++i) {
    q.values[i] = static_cast<std::int32_t>(std::clamp(std::round(static_cast<double>(z[i])), -kLimit, kLimit));
  }
  return q;
}

template <typename T>
Tensor<T> symbols_to_tensor(const SymbolGrid& q) {
  Tensor<T> z({q.channels, q.height, q.width});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<T>(q.values[i]);
  return z;
}

template <typename T>
Tensor<T> add_uniform_noise(const Tensor<T>& z, Rng& rng) {
  Tensor<T> out = z;
  for (auto& v : out.values()) v += static_cast<T>(rng.uniform() - 0.5);
  return out;
}

void clamp_to_support(SymbolGrid& q, const PmfTable& tables) {
  if (tables.size() != q.channels) throw ContractError("PMF table channel count does not match the latent");
  const std::size_t plane = q.plane();
  for (std::size_t c = 0; c < q.channels; ++c) {
    const ChannelPmf& pmf = tables.channels[c];
    for (std::size_t i = 0; i < plane; ++i) q.values[c * plane + i] = pmf.clamp(q.values[c * plane + i]);
  }
}

Image reconstruct(const SymbolGrid& q, const CodecModel<float>& model, int use_version, std::size_t height,
                  std::size_t width) {
  const Tensor<float> x = decode_latent(model, symbols_to_tensor<float>(q), use_version);
  return to_image(crop(x, height, width));
}

EncodeResult encode_image(const Image& image, const CodecModel<float>& model, int use_version) {
  check_version(model.version, use_version);
  if (image.empty()) throw ShapeError("encode_image: image has a zero dimension");
  if (model.config.lambda_index < 0 || model.config.lambda_index > kMaxLambdaIndex) {
    throw ContractError("model lambda_index does not fit the bitstream header");
  }
  const PmfTable& tables = tables_for(model, use_version);
  const std::size_t f = model.config.downsampling();
  const Tensor<float> x = reflect_pad(to_tensor<float>(image), f);
  const Tensor<float> z = encode_latent(model, x, use_version);

  EncodeResult out;
  out.symbols = quantize(z);
  out.estimated_bits =
      rate_bits(symbols_to_tensor<float>(out.symbols), model.params.entropy[static_cast<std::size_t>(use_version - 1)]);
  clamp_to_support(out.symbols, tables);
  out.bitstream.payload = rc_encode(out.symbols, tables);
  BitstreamHeader& h = out.bitstream.header;
  h.codec_version = static_cast<std::uint8_t>(use_version);
  h.lambda_index = static_cast<std::uint8_t>(model.config.lambda_index);
  h.model_hash = model.model_hash;
  h.width = static_cast<std::uint32_t>(image.width);
  h.height = static_cast<std::uint32_t>(image.height);
  h.payload_len = static_cast<std::uint32_t>(out.bitstream.payload.size());
  out.reconstruction = reconstruct(out.symbols, model, use_version, image.height, image.width);
  return out;
}

Image decode_image(const Bitstream& b, const CodecModel<float>& model, DecodeOptions options) {
  const BitstreamHeader& h = b.header;
  if (h.payload_len != b.payload.size()) throw DecodeError("payload_len does not match payload size");
  const int t = h.codec_version;
  if (t > model.version) {
    throw VersionError("bitstream needs codec version " + std::to_string(t) + ", model is version " +
                       std::to_string(model.version));
  }
  check_version(model.version, t);
  if (!options.bypass_hash_check && h.model_hash != model.model_hash) {
    throw WrongModelError("bitstream was produced by a different model (hash mismatch)");
  }
  const PmfTable& tables = tables_for(model, t);
  const std::size_t f = model.config.downsampling();
  const std::size_t hp = (h.height + f - 1) / f, wp = (h.width + f - 1) / f;
  const SymbolGrid q =
      rc_decode(b.payload, tables, model.config.latent_channels(t), hp, wp, !options.bypass_hash_check);
  return reconstruct(q, model, t, h.height, h.width);
}

template SymbolGrid quantize<float>(const Tensor<float>&);
template SymbolGrid quantize<double>(const Tensor<double>&);
template Tensor<float> symbols_to_tensor<float>(const SymbolGrid&);
template Tensor<double> symbols_to_tensor<double>(const SymbolGrid&);
template Tensor<float> add_uniform_noise<float>(const Tensor<float>&, Rng&);
template Tensor<double> add_uniform_noise<double>(const Tensor<double>&, Rng&);

}  // namespace nic
