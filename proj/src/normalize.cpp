#include "ufw/normalize.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "ufw/error.hpp"
#include "ufw/utf8.hpp"

namespace ufw {

void NormalizePolicy::validate() const {
  if (max_consecutive_newlines < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_consecutive_newlines must be >= 1");
  }
}

NormalizePolicy policy_from_json(const nlohmann::json& j) {
  NormalizePolicy p;
  p.lowercase = j.value("lowercase", p.lowercase);
  p.strip_diacritics = j.value("strip_diacritics", p.strip_diacritics);
  p.collapse_spaces = j.value("collapse_spaces", p.collapse_spaces);
  p.max_consecutive_newlines = j.value("max_consecutive_newlines", p.max_consecutive_newlines);
  p.validate();
  return p;
}

nlohmann::json policy_to_json(const NormalizePolicy& p) {
  return {{"lowercase", p.lowercase},
          {"strip_diacritics", p.strip_diacritics},
          {"collapse_spaces", p.collapse_spaces},
          {"max_consecutive_newlines", p.max_consecutive_newlines}};
}

namespace {

icu::UnicodeString strip_marks(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kIo, std::string("ICU NFD unavailable: ") + u_errorName(status));
  }
  icu::UnicodeString decomposed = nfd->normalize(s, status);
  if (U_FAILURE(status)) {
    throw Error(ErrorCode::kIo, std::string("ICU NFD failed: ") + u_errorName(status));
  }
  icu::UnicodeString out;
  out.getBuffer(decomposed.length());
  out.releaseBuffer(0);
  for (int32_t i = 0; i < decomposed.length();) {
    const UChar32 c = decomposed.char32At(i);
    if (u_charType(c) != U_NON_SPACING_MARK) out.append(c);
    i += U16_LENGTH(c);
  }
  return out;
}

std::string unicode_pass(std::string_view text, const NormalizePolicy& policy) {
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  // Lowercasing can introduce marks (U+0130 -> i + U+0307) and mark removal
  // can expose new lowercase mappings, so iterate to a fixed point.
  for (int round = 0; round < 4; ++round) {
    icu::UnicodeString next = s;
    if (policy.lowercase) next.toLower(icu::Locale::getRoot());
    if (policy.strip_diacritics) next = strip_marks(next);
    if (next == s) break;
    s = std::move(next);
  }
  std::string out;
  s.toUTF8String(out);
  return out;
}

void ascii_lower(std::string& s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
}

std::string squeeze(std::string_view s, const NormalizePolicy& policy) {
  std::string out;
  out.reserve(s.size());
  size_t newline_run = 0;
  bool prev_space = false;
  for (char c : s) {
    if (c == '\n') {
      prev_space = false;
      if (++newline_run > static_cast<size_t>(policy.max_consecutive_newlines)) continue;
    } else {
      newline_run = 0;
      if (c == ' ') {
        if (prev_space && policy.collapse_spaces) continue;
        prev_space = true;
      } else {
        prev_space = false;
      }
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string normalize_text(std::string_view raw, const NormalizePolicy& policy) {
  policy.validate();
  utf8::require_valid(raw);
  if (utf8::is_ascii(raw)) {
    std::string out = squeeze(raw, policy);
    if (policy.lowercase) ascii_lower(out);
    return out;
  }
  if (!policy.lowercase && !policy.strip_diacritics) return squeeze(raw, policy);
  return squeeze(unicode_pass(raw, policy), policy);
}

}  // namespace ufw
