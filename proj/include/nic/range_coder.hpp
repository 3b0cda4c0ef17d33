#pragma once

// Integer range coder (format RC-1, see docs/FORMAT.md).
//
// 32-bit range, 64-bit low with a one-byte carry cache, renormalization one
// byte at a time whenever range < 2^24. Frequencies are 16-bit (total 2^16).
// Symbols are coded channel-major, then row-major within a channel, each with
// its channel's PMF. Within a channel the coding intervals follow ascending
// symbol value, except the most probable symbol, which is placed last and
// absorbs the truncation remainder of the range. No floating point is involved anywhere, so payloads are
// identical on every platform.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nic/entropy_model.hpp"

namespace nic {

// Quantized latent, laid out [channels, height, width].
struct SymbolGrid {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> values;

  SymbolGrid() = default;
  SymbolGrid(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), values(c * h * w, 0) {}

  std::size_t plane() const noexcept { return height * width; }
  std::int32_t& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  std::int32_t at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }

  friend bool operator==(const SymbolGrid&, const SymbolGrid&) = default;
};

// Throws ContractError when a symbol lies outside its channel's support.
std::vector<std::uint8_t> rc_encode(const SymbolGrid& symbols, const PmfTable& tables);

// Throws DecodeError when the payload is truncated or has trailing bytes.
// Mismatched tables are not detectable here. With strict = false the decoder
// reads zeros past the end and ignores leftovers instead, so a payload can be
// pushed through the wrong tables on purpose (experiment mode).
SymbolGrid rc_decode(std::span<const std::uint8_t> payload, const PmfTable& tables,
                     std::size_t channels, std::size_t height, std::size_t width, bool strict = true);

// Sum of -log2(p) of the symbols under the integer tables.
double information_bits(const SymbolGrid& symbols, const PmfTable& tables);

class RangeEncoder {
 public:
  // `last`: the symbol owns the top of the interval [cum, 2^16).
  void encode(std::uint32_t cum, std::uint32_t freq, bool last = false);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;  // cache byte plus queued 0xFF bytes awaiting a carry
  bool started_ = false;       // the very first cache byte is always zero and is not emitted
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> payload, bool strict = true);

  // Target cumulative frequency of the next symbol, in [0, 2^16).
  std::uint32_t peek();
  void consume(std::uint32_t cum, std::uint32_t freq, bool last = false);
  // Throws DecodeError unless every payload byte was consumed.
  void finish() const;

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  bool strict_ = true;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
  std::uint32_t code_ = 0;
};

}  // namespace nic
