#include "ufw/tokenize.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unicode/uchar.h>

#include "ufw/error.hpp"
#include "ufw/hash.hpp"
#include "ufw/utf8.hpp"

namespace ufw {

TokenizerSpec tokenizer_spec_from_json(const nlohmann::json& j) {
  TokenizerSpec spec;
  const std::string kind = j.value("kind", std::string("unicode_words"));
  if (kind == "unicode_words") {
    spec.kind = TokenizerKind::kUnicodeWords;
  } else if (kind == "vocab_greedy") {
    spec.kind = TokenizerKind::kVocabGreedy;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown tokenizer kind '" + kind + "'");
  }
  if (j.contains("vocab_path") && !j["vocab_path"].is_null()) {
    spec.vocab_path = j["vocab_path"].get<std::string>();
  }
  spec.preserve_structural = j.value("preserve_structural", true);
  return spec;
}

nlohmann::json tokenizer_spec_to_json(const TokenizerSpec& spec) {
  nlohmann::json j;
  j["kind"] = spec.kind == TokenizerKind::kUnicodeWords ? "unicode_words" : "vocab_greedy";
  j["vocab_path"] = spec.vocab_path ? nlohmann::json(*spec.vocab_path) : nlohmann::json(nullptr);
  j["preserve_structural"] = spec.preserve_structural;
  return j;
}

namespace {

constexpr bool is_structural(char c) { return c == '\n' || c == '\t' || c == '\r'; }

constexpr bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
}

}  // namespace

Tokenizer Tokenizer::load(const TokenizerSpec& spec) {
  if (spec.kind == TokenizerKind::kUnicodeWords) {
    Tokenizer t;
    t.spec_ = spec;
    return t;
  }
  if (!spec.vocab_path) {
    throw Error(ErrorCode::kVocabNotFound, "vocab_greedy tokenizer requires vocab_path");
  }
  std::ifstream in(*spec.vocab_path, std::ios::binary);
  if (!in || std::filesystem::is_directory(*spec.vocab_path)) {
    throw Error(ErrorCode::kVocabNotFound, "cannot read vocabulary '" + *spec.vocab_path + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  std::vector<std::string> entries;
  std::unordered_set<std::string> seen;
  size_t line_no = 0;
  size_t start = 0;
  while (start < bytes.size()) {
    size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    ++line_no;
    std::string line = bytes.substr(start, end - start);
    start = end + 1;
    if (line.empty()) {
      throw Error(ErrorCode::kVocabMalformed, "empty entry at line " + std::to_string(line_no));
    }
    if (!utf8::is_valid(line)) {
      throw Error(ErrorCode::kVocabMalformed, "invalid UTF-8 at line " + std::to_string(line_no));
    }
    if (!seen.insert(line).second) {
      throw Error(ErrorCode::kVocabMalformed,
                  "duplicate entry at line " + std::to_string(line_no));
    }
    entries.push_back(std::move(line));
  }
  return make_greedy(std::move(entries), spec, fnv1a64(bytes));
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> entries, bool preserve_structural) {
  TokenizerSpec spec;
  spec.kind = TokenizerKind::kVocabGreedy;
  spec.preserve_structural = preserve_structural;
  Fnv64 h;
  std::unordered_set<std::string> seen;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.empty() || !utf8::is_valid(e) || !seen.insert(e).second) {
      throw Error(ErrorCode::kVocabMalformed, "bad vocabulary entry at line " + std::to_string(i + 1));
    }
    h.update(e);
    h.update("\n");
  }
  return make_greedy(std::move(entries), std::move(spec), h.digest());
}

Tokenizer Tokenizer::make_greedy(std::vector<std::string> entries, TokenizerSpec spec, uint64_t hash) {
  Tokenizer t;
  t.spec_ = std::move(spec);
  t.vocab_hash_ = hash;
  auto storage = std::make_shared<std::vector<std::string>>(std::move(entries));
  for (const auto& e : *storage) {
    t.vocab_.insert(std::string_view(e));
    t.max_token_bytes_ = std::max(t.max_token_bytes_, e.size());
  }
  t.storage_ = std::move(storage);
  return t;
}

void Tokenizer::split_words(std::string_view text, std::vector<std::string_view>& out) const {
  const bool structural = spec_.preserve_structural;
  size_t word_start = std::string_view::npos;
  size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    size_t next = i;
    bool space;
    if (c < 0x80) {
      space = is_ascii_space(c);
      next = i + 1;
    } else {
      const char32_t cp = utf8::decode(text, next);
      space = u_isUWhiteSpace(static_cast<UChar32>(cp));
    }
    if (space) {
      if (word_start != std::string_view::npos) {
        out.push_back(text.substr(word_start, i - word_start));
        word_start = std::string_view::npos;
      }
      if (structural && is_structural(static_cast<char>(c))) out.push_back(text.substr(i, 1));
    } else if (word_start == std::string_view::npos) {
      word_start = i;
    }
    i = next;
  }
  if (word_start != std::string_view::npos) out.push_back(text.substr(word_start));
}

void Tokenizer::split_greedy(std::string_view text, std::vector<std::string_view>& out) const {
  const bool structural = spec_.preserve_structural;
  size_t i = 0;
  while (i < text.size()) {
    if (structural && is_structural(text[i])) {
      out.push_back(text.substr(i, 1));
      ++i;
      continue;
    }
    // Candidate ends are code point boundaries, never crossing a structural char.
    size_t limit = std::min(text.size(), i + max_token_bytes_);
    size_t best = 0;
    size_t first_cp_end = i;
    {
      size_t p = i;
      utf8::decode(text, p);
      first_cp_end = p;
    }
    size_t p = i;
    while (p < limit) {
      if (structural && p > i && is_structural(text[p])) break;
      size_t q = p;
      utf8::decode(text, q);
      if (q > limit) break;
      p = q;
      if (vocab_.count(text.substr(i, p - i))) best = p;
    }
    const size_t end = best ? best : first_cp_end;
    out.push_back(text.substr(i, end - i));
    i = end;
  }
}

std::vector<std::string_view> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::string_view> out;
  out.reserve(text.size() / 5 + 1);
  if (spec_.kind == TokenizerKind::kUnicodeWords) {
    split_words(text, out);
  } else {
    split_greedy(text, out);
  }
  return out;
}

std::vector<std::string> Tokenizer::tokenize_owned(std::string_view text) const {
  const auto views = tokenize(text);
  return {views.begin(), views.end()};
}

size_t Tokenizer::token_count(std::string_view text) const { return tokenize(text).size(); }

}  // namespace ufw
