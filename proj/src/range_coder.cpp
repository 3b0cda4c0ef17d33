#include "nic/range_coder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nic {
namespace {

constexpr std::uint32_t kTop = 1u << 24;

void check_tables(const PmfTable& tables, std::size_t channels) {
  if (tables.size() != channels) {
    throw ContractError("PMF table has " + std::to_string(tables.size()) + " channels, grid has " +
                        std::to_string(channels));
  }
}

// Coding order of one channel: ascending symbol value, except that the most
// probable symbol (lowest value on ties) is moved to the end, where it takes
// the truncation remainder of the range.
struct CodingOrder {
  std::vector<std::uint32_t> start;   // by value index
  std::vector<std::uint32_t> bounds;  // by coding position, size n + 1
  std::vector<std::uint32_t> index;   // coding position -> value index
  std::size_t mps = 0;

  explicit CodingOrder(const ChannelPmf& pmf) {
    const std::size_t n = pmf.freq.size();
    mps = static_cast<std::size_t>(std::max_element(pmf.freq.begin(), pmf.freq.end()) - pmf.freq.begin());
    start.resize(n);
    bounds.reserve(n + 1);
    index.reserve(n);
    std::uint32_t acc = 0;
    auto place = [&](std::size_t k) {
      start[k] = acc;
      bounds.push_back(acc);
      index.push_back(static_cast<std::uint32_t>(k));
      acc += pmf.freq[k];
    };
    for (std::size_t k = 0; k < n; ++k)
      if (k != mps) place(k);
    place(mps);
    bounds.push_back(acc);
  }
};

std::vector<CodingOrder> coding_orders(const PmfTable& tables) {
  std::vector<CodingOrder> out;
  out.reserve(tables.size());
  for (const auto& pmf : tables.channels) out.emplace_back(pmf);
  return out;
}

}  // namespace

void RangeEncoder::shift_low() {
  if (low_ < 0xFF000000u || low_ > 0xFFFFFFFFu) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t byte = cache_;
    do {
      if (started_) out_.push_back(static_cast<std::uint8_t>(byte + carry));
      started_ = true;
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, bool last) {
  const std::uint32_t r = range_ >> ChannelPmf::kPrecisionBits;
  low_ += static_cast<std::uint64_t>(cum) * r;
  range_ = last ? range_ - cum * r : freq * r;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> payload, bool strict) : in_(payload), strict_(strict) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= in_.size()) {
    if (!strict_) return 0;
    throw DecodeError("range decoder: payload truncated after " + std::to_string(in_.size()) + " bytes");
  }
  return in_[pos_++];
}

std::uint32_t RangeDecoder::peek() {
  if (code_ >= range_) {
    if (strict_) throw DecodeError("range decoder: corrupt payload");
    code_ = range_ - 1;
  }
  r_ = range_ >> ChannelPmf::kPrecisionBits;
  return std::min(code_ / r_, ChannelPmf::kTotal - 1);
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq, bool last) {
  code_ -= cum * r_;
  range_ = last ? range_ - cum * r_ : freq * r_;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

void RangeDecoder::finish() const {
  if (strict_ && pos_ != in_.size()) {
    throw DecodeError("range decoder: " + std::to_string(in_.size() - pos_) + " unread trailing bytes");
  }
}

std::vector<std::uint8_t> rc_encode(const SymbolGrid& symbols, const PmfTable& tables) {
  check_tables(tables, symbols.channels);
  if (symbols.values.size() != symbols.channels * symbols.plane()) {
    throw ContractError("symbol grid size does not match its dims");
  }
  if (symbols.values.empty()) return {};
  const auto orders = coding_orders(tables);
  RangeEncoder enc;
  const std::size_t plane = symbols.plane();
  for (std::size_t c = 0; c < symbols.channels; ++c) {
    const ChannelPmf& pmf = tables.channels[c];
    const CodingOrder& order = orders[c];
    for (std::size_t i = 0; i < plane; ++i) {
      const std::int32_t q = symbols.values[c * plane + i];
      if (!pmf.contains(q)) {
        throw ContractError("symbol " + std::to_string(q) + " in channel " + std::to_string(c) +
                            " outside support [" + std::to_string(pmf.q_min) + ", " +
                            std::to_string(pmf.q_max) + "]");
      }
      const auto idx = static_cast<std::size_t>(q - pmf.q_min);
      enc.encode(order.start[idx], pmf.freq[idx], idx == order.mps);
    }
  }
  return enc.finish();
}

SymbolGrid rc_decode(std::span<const std::uint8_t> payload, const PmfTable& tables,
                     std::size_t channels, std::size_t height, std::size_t width, bool strict) {
  check_tables(tables, channels);
  SymbolGrid grid(channels, height, width);
  if (grid.values.empty()) {
    if (strict && !payload.empty()) throw DecodeError("range decoder: payload for an empty grid");
    return grid;
  }
  const auto orders = coding_orders(tables);
  RangeDecoder dec(payload, strict);
  const std::size_t plane = grid.plane();
  for (std::size_t c = 0; c < channels; ++c) {
    const ChannelPmf& pmf = tables.channels[c];
    const CodingOrder& order = orders[c];
    for (std::size_t i = 0; i < plane; ++i) {
      const std::uint32_t target = dec.peek();
      const auto it = std::upper_bound(order.bounds.begin(), order.bounds.end(), target);
      const auto pos = static_cast<std::size_t>(it - order.bounds.begin()) - 1;
      const std::size_t idx = order.index[pos];
      dec.consume(order.bounds[pos], pmf.freq[idx], idx == order.mps);
      grid.values[c * plane + i] = pmf.q_min + static_cast<std::int32_t>(idx);
    }
  }
  dec.finish();
  return grid;
}

double information_bits(const SymbolGrid& symbols, const PmfTable& tables) {
  check_tables(tables, symbols.channels);
  double bits = 0.0;
  const std::size_t plane = symbols.plane();
  for (std::size_t c = 0; c < symbols.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      bits += tables.channels[c].information_bits(symbols.values[c * plane + i]);
    }
  }
  return bits;
}

}  // namespace nic
