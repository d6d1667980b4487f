#include "ufw/error.hpp"
#include "ufw/hash.hpp"
#include "ufw/utf8.hpp"

namespace ufw {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidUtf8: return "InvalidUtf8";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kVocabNotFound: return "VocabNotFound";
    case ErrorCode::kVocabMalformed: return "VocabMalformed";
    case ErrorCode::kEmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kUnknownLabel: return "UnknownLabel";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kCorruptPayload: return "CorruptPayload";
    case ErrorCode::kUnknownCategory: return "UnknownCategory";
    case ErrorCode::kFactorOutOfRange: return "FactorOutOfRange";
    case ErrorCode::kInsufficientSeedData: return "InsufficientSeedData";
    case ErrorCode::kNoCategories: return "NoCategories";
    case ErrorCode::kShardUnreadable: return "ShardUnreadable";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kCorpusMismatch: return "CorpusMismatch";
    case ErrorCode::kNonPositiveTokens: return "NonPositiveTokens";
    case ErrorCode::kInsufficientDefaultTokens: return "InsufficientDefaultTokens";
    case ErrorCode::kCandidateEpochOverflow: return "CandidateEpochOverflow";
    case ErrorCode::kMissingMetric: return "MissingMetric";
    case ErrorCode::kStateCorrupt: return "StateCorrupt";
    case ErrorCode::kJournalUnreadable: return "JournalUnreadable";
    case ErrorCode::kInvalidTransition: return "InvalidTransition";
    case ErrorCode::kLocked: return "Locked";
    case ErrorCode::kUnknownCommand: return "UnknownCommand";
  }
  return "Unknown";
}

std::string to_hex(uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

uint64_t from_hex(std::string_view s) {
  if (s.empty() || s.size() > 16) {
    throw Error(ErrorCode::kInvalidArgument, "bad hex value '" + std::string(s) + "'");
  }
  uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<uint64_t>(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') v |= static_cast<uint64_t>(c - 'A' + 10);
    else throw Error(ErrorCode::kInvalidArgument, "bad hex value '" + std::string(s) + "'");
  }
  return v;
}

namespace utf8 {

std::optional<size_t> find_invalid(std::string_view s) noexcept {
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  const size_t n = s.size();
  size_t i = 0;
  while (i < n) {
    const unsigned char c = p[i];
    if (c < 0x80) {
      ++i;
      continue;
    }
    size_t len;
    char32_t cp;
    if (c >= 0xC2 && c <= 0xDF) {
      len = 2;
      cp = c & 0x1F;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (size_t k = 1; k < len; ++k) {
      if ((p[i + k] & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (p[i + k] & 0x3F);
    }
    if ((len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return i;
    }
    i += len;
  }
  return std::nullopt;
}

void require_valid(std::string_view s) {
  if (auto pos = find_invalid(s)) {
    throw Error(ErrorCode::kInvalidUtf8, "invalid UTF-8 sequence at byte " + std::to_string(*pos));
  }
}

char32_t decode(std::string_view s, size_t& pos) noexcept {
  const auto c = static_cast<unsigned char>(s[pos]);
  if (c < 0x80) {
    ++pos;
    return c;
  }
  size_t len = c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : 2;
  if (pos + len > s.size()) {
    pos = s.size();
    return 0xFFFD;
  }
  char32_t cp = c & (len == 2 ? 0x1F : len == 3 ? 0x0F : 0x07);
  for (size_t k = 1; k < len; ++k) {
    cp = (cp << 6) | (static_cast<unsigned char>(s[pos + k]) & 0x3F);
  }
  pos += len;
  return cp;
}

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace utf8
}  // namespace ufw
