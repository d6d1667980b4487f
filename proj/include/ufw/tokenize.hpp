#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace ufw {

enum class TokenizerKind { kUnicodeWords, kVocabGreedy };

struct TokenizerSpec {
  TokenizerKind kind = TokenizerKind::kUnicodeWords;
  std::optional<std::string> vocab_path;  // required iff kind == kVocabGreedy
  bool preserve_structural = true;
};

TokenizerSpec tokenizer_spec_from_json(const nlohmann::json& j);
nlohmann::json tokenizer_spec_to_json(const TokenizerSpec& spec);

// Immutable after construction; share freely across threads.
//
// unicode_words splits on Unicode White_Space. vocab_greedy does greedy
// longest match against a one-token-per-line vocabulary and falls back to a
// single code point when nothing matches; the tokens concatenate back to the
// input exactly. With preserve_structural, '\n', '\t' and '\r' are always
// emitted as single-character tokens in either mode.
class Tokenizer {
 public:
  Tokenizer() = default;

  static Tokenizer load(const TokenizerSpec& spec);
  static Tokenizer from_vocab(std::vector<std::string> entries, bool preserve_structural = true);

  // Tokens are views into `text`; `text` must outlive them.
  std::vector<std::string_view> tokenize(std::string_view text) const;
  std::vector<std::string> tokenize_owned(std::string_view text) const;
  size_t token_count(std::string_view text) const;

  const TokenizerSpec& spec() const { return spec_; }
  // FNV-1a 64 of the vocabulary file bytes; 0 for unicode_words.
  uint64_t vocab_hash() const { return vocab_hash_; }
  size_t vocab_size() const { return vocab_.size(); }

 private:
  static Tokenizer make_greedy(std::vector<std::string> entries, TokenizerSpec spec, uint64_t hash);
  void split_words(std::string_view text, std::vector<std::string_view>& out) const;
  void split_greedy(std::string_view text, std::vector<std::string_view>& out) const;

  TokenizerSpec spec_;
  std::unordered_set<std::string_view> vocab_;
  // Views in vocab_ point into this shared, immutable storage, so copies stay valid.
  std::shared_ptr<const std::vector<std::string>> storage_;
  size_t max_token_bytes_ = 0;
  uint64_t vocab_hash_ = 0;
};

}  // namespace ufw
