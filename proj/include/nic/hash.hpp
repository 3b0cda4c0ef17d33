#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace nic {

// 64-bit FNV-1a. Used for model fingerprints and manifest digests; not a
// cryptographic hash.
class Fnv1a {
 public:
  static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

  void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= kPrime;
    }
  }

  void update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

}  // namespace nic
