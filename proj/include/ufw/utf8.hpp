#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace ufw::utf8 {

// Byte offset of the first invalid sequence, or nullopt if `s` is valid
// UTF-8 (no overlongs, no surrogates, nothing above U+10FFFF).
std::optional<size_t> find_invalid(std::string_view s) noexcept;

inline bool is_valid(std::string_view s) noexcept { return !find_invalid(s); }

// Throws Error(kInvalidUtf8) naming the byte offset.
void require_valid(std::string_view s);

// Decodes one code point at `pos` of a valid string and advances `pos`.
char32_t decode(std::string_view s, size_t& pos) noexcept;

void append(std::string& out, char32_t cp);

inline bool is_ascii(std::string_view s) noexcept {
  for (char c : s) {
    if (static_cast<unsigned char>(c) >= 0x80) return false;
  }
  return true;
}

}  // namespace ufw::utf8
