#pragma once

#include <string>
#include <string_view>

#include "e2d2/tensor.hpp"

namespace e2d2::vocab {

// Byte-level vocabulary: 256 byte tokens plus specials. MASK is the last
// index, so mask_id == V - 1.
inline constexpr Token kPad = 256;
inline constexpr Token kBos = 257;
inline constexpr Token kEos = 258;
inline constexpr Token kMask = 259;
inline constexpr std::int64_t kSize = 260;

TokenSeq encode(std::string_view bytes);

// Maps byte tokens back to bytes; special tokens are dropped.
std::string decode(const TokenSeq& ids);

}  // namespace e2d2::vocab
