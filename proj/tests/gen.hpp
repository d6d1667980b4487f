#pragma once

// Shared generators for the property-style tests.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "ufw/utf8.hpp"

namespace ufwtest {

inline size_t count_char(const std::string& s, char c) {
  return static_cast<size_t>(std::count(s.begin(), s.end(), c));
}

inline std::string nfd(const std::string& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFDInstance(status);
  icu::UnicodeString u = n->normalize(icu::UnicodeString::fromUTF8(s), status);
  std::string out;
  u.toUTF8String(out);
  return out;
}

// Text mixing ASCII, precomposed and combining marks, several scripts,
// and runs of spaces, newlines, tabs and carriage returns.
inline std::string random_unicode_text(std::mt19937_64& rng, size_t max_units) {
  static const char32_t kPool[] = {
      U'A', U'Z', U'a', U'z', U'0', U'9', U'.', U',', U'!', U'-',
      0x00C0, 0x00C9, 0x00E9, 0x00F1, 0x00DC, 0x0130, 0x0131, 0x00DF, 0x1E9E, 0x01C5,
      0x0300, 0x0301, 0x0308, 0x0327, 0x0303, 0x036F, 0x20D7, 0x0489,
      0x0410, 0x0416, 0x044F, 0x0401, 0x0391, 0x03A3, 0x03C2, 0x0386,
      0x4E2D, 0x6587, 0xAC00, 0xD55C, 0x3042, 0x0627, 0x05D0, 0x0E01, 0x0E31,
      0x1F600, 0x00A0, 0x2003, 0x2028, 0x0085, 0x023A, 0xFB01,
  };
  std::uniform_int_distribution<size_t> len_dist(0, max_units);
  std::uniform_int_distribution<size_t> pick(0, std::size(kPool) - 1);
  std::uniform_int_distribution<int> kind(0, 9);
  std::uniform_int_distribution<int> run(1, 6);
  std::string out;
  const size_t n = len_dist(rng);
  for (size_t i = 0; i < n; ++i) {
    switch (kind(rng)) {
      case 0: out.append(static_cast<size_t>(run(rng)), ' '); break;
      case 1: out.append(static_cast<size_t>(run(rng)), '\n'); break;
      case 2: out.push_back('\t'); break;
      case 3: out.push_back('\r'); break;
      default: ufw::utf8::append(out, kPool[pick(rng)]); break;
    }
  }
  return out;
}

inline std::string random_word(std::mt19937_64& rng, size_t min_len = 1, size_t max_len = 8) {
  std::uniform_int_distribution<size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> ch('a', 'z');
  std::string w;
  const size_t n = len(rng);
  for (size_t i = 0; i < n; ++i) w.push_back(static_cast<char>(ch(rng)));
  return w;
}

}  // namespace ufwtest
