#pragma once

// Model file (format NICM v1, see docs/FORMAT.md).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nic/codec_model.hpp"

namespace nic {

inline constexpr std::uint8_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const CodecModel<float>& model);

// Throws FormatError (with byte offset) on bad magic, unknown version,
// truncation, layout mismatch, trailing bytes or a hash that does not match
// the stored parameters.
CodecModel<float> parse_model(std::span<const std::uint8_t> bytes);

void save_model(const CodecModel<float>& model, const std::string& path);
CodecModel<float> load_model(const std::string& path);

}  // namespace nic
