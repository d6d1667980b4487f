#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ufw/classifier.hpp"
#include "ufw/normalize.hpp"
#include "ufw/tokenize.hpp"

namespace ufw {

struct Document {
  std::string id;  // shard-name:line-number when the record has none
  std::string text;
  std::optional<std::string> source;
  std::map<std::string, std::string> meta;
};

// One JSONL record. `line_no` is 1-based and only used to synthesize ids.
// Throws Error(kMalformedRecord).
Document parse_document(std::string_view line, std::string_view shard_name, uint64_t line_no);
nlohmann::json document_to_json(const Document& doc);

struct ScoredDocument {
  std::string id;
  double score = 0.0;  // p(positive)
  bool kept = false;
};

std::vector<uint64_t> default_token_bin_edges();

// Bins are [0, e0), [e0, e1), ..., [e_last, inf).
class TokenHistogram {
 public:
  TokenHistogram() : TokenHistogram(default_token_bin_edges()) {}
  // Throws kInvalidArgument unless edges are strictly increasing and positive.
  explicit TokenHistogram(std::vector<uint64_t> edges);
  TokenHistogram(std::vector<uint64_t> edges, std::vector<uint64_t> counts);

  void add(uint64_t tokens, uint64_t n = 1);
  void merge(const TokenHistogram& other);  // edges must match

  const std::vector<uint64_t>& edges() const { return edges_; }
  const std::vector<uint64_t>& counts() const { return counts_; }
  size_t bin_of(uint64_t tokens) const;

  bool operator==(const TokenHistogram&) const = default;

 private:
  std::vector<uint64_t> edges_;
  std::vector<uint64_t> counts_;
};

struct FilterStats {
  uint64_t documents_total = 0;  // includes malformed records
  uint64_t documents_kept = 0;
  uint64_t tokens_total = 0;  // over scored documents
  uint64_t tokens_kept = 0;
  uint64_t malformed = 0;
  uint64_t zero_feature = 0;
  std::array<uint64_t, 100> score_histogram{};  // mass == documents_total - malformed
  TokenHistogram token_length_histogram;

  static size_t score_bin(double score);
  void merge(const FilterStats& other);
  bool operator==(const FilterStats&) const = default;
};

nlohmann::json filter_stats_to_json(const FilterStats& stats);
FilterStats filter_stats_from_json(const nlohmann::json& j);

struct ScoreOptions {
  double threshold = 0.5;
  bool normalize = true;
  NormalizePolicy policy;
  int workers = 1;
  std::vector<uint64_t> token_bin_edges = default_token_bin_edges();

  void validate() const;  // threshold in [0,1], workers >= 1
};

// A shard already read into memory (decompressed).
struct ShardText {
  std::string name;
  std::string content;
};

struct ShardScores {
  std::vector<Document> documents;
  std::vector<ScoredDocument> scored;  // parallel to documents, input order
  FilterStats stats;
};

// Scores one shard. Malformed lines are skipped and counted; blank lines
// are not records.
ShardScores score_shard(const ClassifierModel& model, const Tokenizer& tokenizer, const ShardText& shard,
                        const ScoreOptions& options);

// Scores shards on `options.workers` threads, one shard per task. Results
// are in shard order and independent of the worker count.
std::vector<ShardScores> score_shards(const ClassifierModel& model, const Tokenizer& tokenizer,
                                      std::span<const ShardText> shards, const ScoreOptions& options);

// Shard file contents, gunzipped when the name ends in ".gz".
// Throws Error(kShardUnreadable).
std::string read_shard_text(const std::filesystem::path& path);
uint64_t shard_fingerprint(std::string_view raw_bytes);
// Order-independent combination of shard fingerprints.
uint64_t corpus_fingerprint(std::span<const uint64_t> shard_fingerprints);

struct KeepManifest {
  uint64_t corpus_fingerprint = 0;
  std::vector<std::string> ids;  // sorted, unique

  bool operator==(const KeepManifest&) const = default;
};

// "# corpus-fingerprint <hex>" then one id per line.
std::string format_manifest(const KeepManifest& m);
KeepManifest parse_manifest(std::string_view text);
KeepManifest read_manifest(const std::filesystem::path& path);

// Throws kInvalidArgument for fewer than two manifests, kCorpusMismatch
// when fingerprints differ.
KeepManifest intersect(std::span<const KeepManifest> manifests);

struct ShardOutcome {
  std::string shard;
  bool ok = false;
  bool resumed = false;  // taken from the ledger of an earlier run
  std::string error;
  uint64_t fingerprint = 0;
  FilterStats stats;
};

struct ScoreRun {
  FilterStats stats;
  std::vector<ShardOutcome> shards;
  KeepManifest kept;
  bool partial = false;  // some shard was unreadable
};

// File-based run over `shards` into `out_dir`:
//   kept/<shard>.jsonl, rejected/<shard>.jsonl  (documents plus "score")
//   ledger.jsonl    completed shards; a rerun skips them
//   kept.manifest   sorted kept ids
//   stats.json
// Unreadable shards are reported and the run continues.
ScoreRun score_corpus(const std::filesystem::path& model_path, const Tokenizer& tokenizer,
                      std::span<const std::filesystem::path> shards, const std::filesystem::path& out_dir,
                      const ScoreOptions& options);

struct TokenLengthReport {
  TokenHistogram histogram;
  uint64_t documents = 0;
  uint64_t tokens = 0;
  uint64_t malformed = 0;
  double mean = 0.0;
  uint64_t p50 = 0;  // nearest rank
  uint64_t p90 = 0;
  uint64_t p99 = 0;
  std::vector<std::string> unreadable;
};

TokenLengthReport token_length_histogram(std::span<const std::filesystem::path> shards, const Tokenizer& tokenizer,
                                         std::vector<uint64_t> bin_edges, int workers = 1);
TokenLengthReport token_length_histogram(std::span<const ShardText> shards, const Tokenizer& tokenizer,
                                         std::vector<uint64_t> bin_edges, int workers = 1);
nlohmann::json token_length_report_to_json(const TokenLengthReport& r);

}  // namespace ufw
