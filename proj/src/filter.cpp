#include "ufw/filter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "ufw/error.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/hash.hpp"
#include "ufw/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ufw {

// -------------------------------------------------------------- documents

Document parse_document(std::string_view line, std::string_view shard_name, uint64_t line_no) {
  auto bad = [&](const std::string& why) {
    return Error(ErrorCode::kMalformedRecord,
                 std::string(shard_name) + ":" + std::to_string(line_no) + ": " + why);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw bad(e.what());
  }
  if (!j.is_object()) throw bad("record is not an object");
  Document d;
  auto text = j.find("text");
  if (text == j.end() || !text->is_string()) throw bad("missing string field \"text\"");
  d.text = text->get<std::string>();
  if (auto id = j.find("id"); id != j.end() && !id->is_null()) {
    if (!id->is_string()) throw bad("\"id\" must be a string");
    d.id = id->get<std::string>();
    if (d.id.empty()) throw bad("empty id");
    if (d.id.find('\n') != std::string::npos) throw bad("id contains a newline");
  } else {
    d.id = std::string(shard_name) + ":" + std::to_string(line_no);
  }
  if (auto src = j.find("source"); src != j.end() && !src->is_null()) {
    if (!src->is_string()) throw bad("\"source\" must be a string");
    d.source = src->get<std::string>();
  }
  if (auto meta = j.find("meta"); meta != j.end() && !meta->is_null()) {
    if (!meta->is_object()) throw bad("\"meta\" must be an object");
    for (auto& [k, v] : meta->items()) {
      if (!v.is_string()) throw bad("meta value for \"" + k + "\" is not a string");
      d.meta.emplace(k, v.get<std::string>());
    }
  }
  return d;
}

json document_to_json(const Document& doc) {
  json j = {{"id", doc.id}, {"text", doc.text}};
  if (doc.source) j["source"] = *doc.source;
  if (!doc.meta.empty()) j["meta"] = doc.meta;
  return j;
}

// -------------------------------------------------------------- histograms

std::vector<uint64_t> default_token_bin_edges() {
  return {16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192};
}

TokenHistogram::TokenHistogram(std::vector<uint64_t> edges) : edges_(std::move(edges)) {
  for (size_t i = 0; i < edges_.size(); ++i) {
    if (edges_[i] == 0 || (i > 0 && edges_[i] <= edges_[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "token bin edges must be positive and strictly increasing");
    }
  }
  counts_.assign(edges_.size() + 1, 0);
}

size_t TokenHistogram::bin_of(uint64_t tokens) const {
  return static_cast<size_t>(std::upper_bound(edges_.begin(), edges_.end(), tokens) - edges_.begin());
}

TokenHistogram::TokenHistogram(std::vector<uint64_t> edges, std::vector<uint64_t> counts)
    : TokenHistogram(std::move(edges)) {
  if (counts.size() != counts_.size()) throw Error(ErrorCode::kInvalidArgument, "histogram has wrong bin count");
  counts_ = std::move(counts);
}

void TokenHistogram::add(uint64_t tokens, uint64_t n) { counts_[bin_of(tokens)] += n; }

void TokenHistogram::merge(const TokenHistogram& other) {
  if (other.edges_ != edges_) throw Error(ErrorCode::kInvalidArgument, "token histograms have different bins");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

size_t FilterStats::score_bin(double score) {
  return std::min<size_t>(99, static_cast<size_t>(std::floor(std::clamp(score, 0.0, 1.0) * 100.0)));
}

void FilterStats::merge(const FilterStats& o) {
  documents_total += o.documents_total;
  documents_kept += o.documents_kept;
  tokens_total += o.tokens_total;
  tokens_kept += o.tokens_kept;
  malformed += o.malformed;
  zero_feature += o.zero_feature;
  for (size_t i = 0; i < score_histogram.size(); ++i) score_histogram[i] += o.score_histogram[i];
  token_length_histogram.merge(o.token_length_histogram);
}

json filter_stats_to_json(const FilterStats& s) {
  return {{"documents_total", s.documents_total},
          {"documents_kept", s.documents_kept},
          {"tokens_total", s.tokens_total},
          {"tokens_kept", s.tokens_kept},
          {"malformed", s.malformed},
          {"zero_feature", s.zero_feature},
          {"score_histogram", s.score_histogram},
          {"token_length_histogram",
           {{"edges", s.token_length_histogram.edges()}, {"counts", s.token_length_histogram.counts()}}}};
}

FilterStats filter_stats_from_json(const json& j) {
  try {
    FilterStats s;
    s.documents_total = j.at("documents_total").get<uint64_t>();
    s.documents_kept = j.at("documents_kept").get<uint64_t>();
    s.tokens_total = j.at("tokens_total").get<uint64_t>();
    s.tokens_kept = j.at("tokens_kept").get<uint64_t>();
    s.malformed = j.at("malformed").get<uint64_t>();
    s.zero_feature = j.at("zero_feature").get<uint64_t>();
    s.score_histogram = j.at("score_histogram").get<std::array<uint64_t, 100>>();
    const auto& h = j.at("token_length_histogram");
    s.token_length_histogram = TokenHistogram(h.at("edges").get<std::vector<uint64_t>>(),
                                              h.at("counts").get<std::vector<uint64_t>>());
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad filter stats: ") + e.what());
  }
}

// ------------------------------------------------------------------ scoring

void ScoreOptions::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must be in [0, 1]");
  }
  if (workers < 1) throw Error(ErrorCode::kInvalidArgument, "worker count must be at least 1");
  policy.validate();
  TokenHistogram check(token_bin_edges);
}

namespace {

template <class Fn>
void for_each_line(std::string_view content, Fn&& fn) {
  uint64_t line_no = 0;
  size_t pos = 0;
  while (pos < content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    fn(line, line_no);
  }
}

}  // namespace

ShardScores score_shard(const ClassifierModel& model, const Tokenizer& tokenizer, const ShardText& shard,
                        const ScoreOptions& options) {
  ShardScores out;
  out.stats.token_length_histogram = TokenHistogram(options.token_bin_edges);
  const auto positive = static_cast<size_t>(model.positive_label());
  std::unordered_set<std::string> seen;
  std::string normalized;
  for_each_line(shard.content, [&](std::string_view line, uint64_t line_no) {
    ++out.stats.documents_total;
    Document doc;
    std::vector<std::string_view> tokens;
    try {
      doc = parse_document(line, shard.name, line_no);
      if (!seen.insert(doc.id).second) {
        throw Error(ErrorCode::kMalformedRecord, shard.name + ":" + std::to_string(line_no) + ": duplicate id '" +
                                                     doc.id + "'");
      }
      if (options.normalize) {
        normalized = normalize_text(doc.text, options.policy);
        tokens = tokenizer.tokenize(normalized);
      } else {
        tokens = tokenizer.tokenize(doc.text);
      }
    } catch (const Error& e) {
      ++out.stats.malformed;
      spdlog::warn("skipping malformed record {}:{}: {}", shard.name, line_no, e.what());
      return;
    }
    const Prediction p = model.predict_tokens(tokens);
    ScoredDocument s;
    s.id = doc.id;
    s.score = p.distribution[positive];
    s.kept = s.score >= options.threshold;
    if (p.feature_count == 0) {
      ++out.stats.zero_feature;
      spdlog::info("document {} has no features; scored {}", doc.id, s.score);
    }
    const uint64_t ntok = tokens.size();
    out.stats.tokens_total += ntok;
    out.stats.token_length_histogram.add(ntok);
    ++out.stats.score_histogram[FilterStats::score_bin(s.score)];
    if (s.kept) {
      ++out.stats.documents_kept;
      out.stats.tokens_kept += ntok;
    }
    out.documents.push_back(std::move(doc));
    out.scored.push_back(std::move(s));
  });
  return out;
}

std::vector<ShardScores> score_shards(const ClassifierModel& model, const Tokenizer& tokenizer,
                                      std::span<const ShardText> shards, const ScoreOptions& options) {
  options.validate();
  std::vector<ShardScores> results(shards.size());
  parallel_for(shards.size(), options.workers,
               [&](size_t i) { results[i] = score_shard(model, tokenizer, shards[i], options); });
  return results;
}

// ------------------------------------------------------------------ shards

std::string read_shard_text(const fs::path& path) {
  std::string raw;
  try {
    raw = read_file(path);
    if (path.extension() == ".gz") return gunzip(raw);
  } catch (const Error& e) {
    throw Error(ErrorCode::kShardUnreadable, path.string() + ": " + e.what());
  }
  return raw;
}

uint64_t shard_fingerprint(std::string_view raw_bytes) { return fnv1a64(raw_bytes); }

uint64_t corpus_fingerprint(std::span<const uint64_t> shard_fingerprints) {
  uint64_t acc = 0;
  for (uint64_t f : shard_fingerprints) acc += splitmix64(f);
  return splitmix64(acc ^ shard_fingerprints.size());
}

// ---------------------------------------------------------------- manifests

std::string format_manifest(const KeepManifest& m) {
  std::string out = "# corpus-fingerprint " + to_hex(m.corpus_fingerprint) + "\n";
  for (const auto& id : m.ids) {
    out += id;
    out += '\n';
  }
  return out;
}

KeepManifest parse_manifest(std::string_view text) {
  static constexpr std::string_view kHeader = "# corpus-fingerprint ";
  const size_t eol = text.find('\n');
  const std::string_view header = text.substr(0, eol);
  if (!header.starts_with(kHeader)) {
    throw Error(ErrorCode::kInvalidArgument, "keep-manifest lacks a corpus-fingerprint header");
  }
  KeepManifest m;
  m.corpus_fingerprint = from_hex(header.substr(kHeader.size()));
  if (eol == std::string_view::npos) return m;
  std::string_view rest = text.substr(eol + 1);
  while (!rest.empty()) {
    const size_t nl = rest.find('\n');
    std::string_view id = rest.substr(0, nl);
    if (!id.empty()) m.ids.emplace_back(id);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  if (!std::is_sorted(m.ids.begin(), m.ids.end())) {
    throw Error(ErrorCode::kInvalidArgument, "keep-manifest ids are not sorted");
  }
  m.ids.erase(std::unique(m.ids.begin(), m.ids.end()), m.ids.end());
  return m;
}

KeepManifest read_manifest(const fs::path& path) { return parse_manifest(read_file(path)); }

KeepManifest intersect(std::span<const KeepManifest> manifests) {
  if (manifests.size() < 2) throw Error(ErrorCode::kInvalidArgument, "intersect needs at least two manifests");
  for (size_t i = 1; i < manifests.size(); ++i) {
    if (manifests[i].corpus_fingerprint != manifests[0].corpus_fingerprint) {
      throw Error(ErrorCode::kCorpusMismatch, "manifest " + std::to_string(i) + " has corpus fingerprint " +
                                                  to_hex(manifests[i].corpus_fingerprint) + ", expected " +
                                                  to_hex(manifests[0].corpus_fingerprint));
    }
  }
  KeepManifest out;
  out.corpus_fingerprint = manifests[0].corpus_fingerprint;
  out.ids = manifests[0].ids;
  for (size_t i = 1; i < manifests.size(); ++i) {
    std::vector<std::string> next;
    std::set_intersection(out.ids.begin(), out.ids.end(), manifests[i].ids.begin(), manifests[i].ids.end(),
                          std::back_inserter(next));
    out.ids = std::move(next);
  }
  return out;
}

// --------------------------------------------------------------- file runs

namespace {

std::string shard_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (std::string_view suffix : {".gz", ".jsonl"}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) name.resize(name.size() - suffix.size());
  }
  return name;
}

std::string render_stream(const ShardScores& s, bool kept) {
  std::string out;
  for (size_t i = 0; i < s.documents.size(); ++i) {
    if (s.scored[i].kept != kept) continue;
    json j = document_to_json(s.documents[i]);
    j["score"] = s.scored[i].score;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<std::string> ids_in_stream(const fs::path& path) {
  std::vector<std::string> ids;
  for_each_line(read_file(path), [&](std::string_view line, uint64_t) {
    ids.push_back(json::parse(line).at("id").get<std::string>());
  });
  return ids;
}

struct LedgerEntry {
  uint64_t fingerprint = 0;
  FilterStats stats;
};

std::unordered_map<std::string, LedgerEntry> read_ledger(const fs::path& path, const std::string& run_key) {
  std::unordered_map<std::string, LedgerEntry> out;
  if (!fs::exists(path)) return out;
  for_each_line(read_file(path), [&](std::string_view line, uint64_t line_no) {
    try {
      const json j = json::parse(line);
      if (j.at("run").get<std::string>() != run_key) return;
      out[j.at("shard").get<std::string>()] = {from_hex(j.at("fingerprint").get<std::string>()),
                                               filter_stats_from_json(j.at("stats"))};
    } catch (const std::exception& e) {
      // A torn final line from an interrupted run is expected.
      spdlog::debug("ignoring ledger line {}: {}", line_no, e.what());
    }
  });
  return out;
}

std::string ledger_line(const std::string& run_key, const std::string& shard, uint64_t fp, const FilterStats& s) {
  return json{{"run", run_key}, {"shard", shard}, {"fingerprint", to_hex(fp)}, {"stats", filter_stats_to_json(s)}}
             .dump() +
         "\n";
}

}  // namespace

ScoreRun score_corpus(const fs::path& model_path, const Tokenizer& tokenizer, std::span<const fs::path> shards,
                      const fs::path& out_dir, const ScoreOptions& options) {
  options.validate();
  const std::string model_bytes = read_file(model_path);
  const ClassifierModel model = ClassifierModel::deserialize(model_bytes);

  std::vector<std::string> stems;
  std::set<std::string> unique;
  for (const auto& p : shards) {
    stems.push_back(shard_stem(p));
    if (!unique.insert(stems.back()).second) {
      throw Error(ErrorCode::kInvalidArgument, "two shards map to output name '" + stems.back() + "'");
    }
  }

  // Ledger entries only count for an identical model and settings.
  const json key_material = {{"model", to_hex(fnv1a64(model_bytes))},
                             {"threshold", options.threshold},
                             {"normalize", options.normalize},
                             {"policy", policy_to_json(options.policy)},
                             {"tokenizer", tokenizer_spec_to_json(tokenizer.spec())},
                             {"vocab", to_hex(tokenizer.vocab_hash())},
                             {"bins", options.token_bin_edges}};
  const std::string run_key = to_hex(fnv1a64(key_material.dump()));

  fs::create_directories(out_dir / "kept");
  fs::create_directories(out_dir / "rejected");
  FileLock lock(out_dir / ".lock");
  const fs::path ledger_path = out_dir / "ledger.jsonl";
  const auto ledger = read_ledger(ledger_path, run_key);

  ScoreRun run;
  run.shards.resize(shards.size());
  std::vector<std::vector<std::string>> kept_ids(shards.size());
  std::mutex ledger_mu;
  parallel_for(shards.size(), options.workers, [&](size_t i) {
    ShardOutcome& o = run.shards[i];
    o.shard = shards[i].string();
    const fs::path kept_path = out_dir / "kept" / (stems[i] + ".jsonl");
    const fs::path rejected_path = out_dir / "rejected" / (stems[i] + ".jsonl");
    std::string raw;
    try {
      raw = read_file(shards[i]);
    } catch (const Error& e) {
      o.error = e.what();
      spdlog::error("shard {} unreadable: {}", o.shard, o.error);
      return;
    }
    o.fingerprint = shard_fingerprint(raw);
    auto done = ledger.find(stems[i]);
    if (done != ledger.end() && done->second.fingerprint == o.fingerprint) {
      try {
        kept_ids[i] = ids_in_stream(kept_path);
        if (!fs::exists(rejected_path)) throw Error(ErrorCode::kIo, "missing " + rejected_path.string());
        o.stats = done->second.stats;
        o.ok = o.resumed = true;
        return;
      } catch (const std::exception& e) {
        spdlog::warn("rescoring shard {}: {}", o.shard, e.what());
        kept_ids[i].clear();
      }
    }
    ShardText text{stems[i], {}};
    try {
      text.content = shards[i].extension() == ".gz" ? gunzip(raw) : std::move(raw);
    } catch (const Error& e) {
      o.error = e.what();
      spdlog::error("shard {} unreadable: {}", o.shard, o.error);
      return;
    }
    ShardScores scores = score_shard(model, tokenizer, text, options);
    write_file_atomic(kept_path, render_stream(scores, true));
    write_file_atomic(rejected_path, render_stream(scores, false));
    for (const auto& sd : scores.scored) {
      if (sd.kept) kept_ids[i].push_back(sd.id);
    }
    o.stats = std::move(scores.stats);
    o.ok = true;
    std::lock_guard guard(ledger_mu);
    append_durable(ledger_path, ledger_line(run_key, stems[i], o.fingerprint, o.stats));
  });

  run.stats.token_length_histogram = TokenHistogram(options.token_bin_edges);
  std::vector<uint64_t> fps;
  std::string ledger_text;
  json shard_list = json::array();
  for (size_t i = 0; i < shards.size(); ++i) {
    const auto& o = run.shards[i];
    shard_list.push_back({{"shard", o.shard}, {"ok", o.ok}, {"fingerprint", to_hex(o.fingerprint)}});
    if (!o.ok) {
      run.partial = true;
      shard_list.back()["error"] = o.error;
      continue;
    }
    run.stats.merge(o.stats);
    fps.push_back(o.fingerprint);
    ledger_text += ledger_line(run_key, stems[i], o.fingerprint, o.stats);
    for (auto& id : kept_ids[i]) run.kept.ids.push_back(std::move(id));
  }
  std::sort(run.kept.ids.begin(), run.kept.ids.end());
  run.kept.ids.erase(std::unique(run.kept.ids.begin(), run.kept.ids.end()), run.kept.ids.end());
  run.kept.corpus_fingerprint = corpus_fingerprint(fps);

  // Rewrite the ledger in shard order so the output directory is
  // deterministic regardless of worker scheduling.
  write_file_atomic(ledger_path, ledger_text);
  write_file_atomic(out_dir / "kept.manifest", format_manifest(run.kept));
  const json stats = {{"threshold", options.threshold},
                      {"partial", run.partial},
                      {"corpus_fingerprint", to_hex(run.kept.corpus_fingerprint)},
                      {"model_fingerprint", to_hex(fnv1a64(model_bytes))},
                      {"shards", shard_list},
                      {"stats", filter_stats_to_json(run.stats)}};
  write_file_atomic(out_dir / "stats.json", stats.dump(2) + "\n");
  return run;
}

// ------------------------------------------------------------ token lengths

namespace {

struct LengthCounts {
  std::map<uint64_t, uint64_t> lengths;  // token count -> documents
  uint64_t malformed = 0;
};

LengthCounts count_lengths(const ShardText& shard, const Tokenizer& tokenizer) {
  LengthCounts out;
  for_each_line(shard.content, [&](std::string_view line, uint64_t line_no) {
    try {
      const Document d = parse_document(line, shard.name, line_no);
      ++out.lengths[tokenizer.token_count(d.text)];
    } catch (const Error& e) {
      ++out.malformed;
      spdlog::warn("skipping malformed record {}:{}: {}", shard.name, line_no, e.what());
    }
  });
  return out;
}

TokenLengthReport summarize(const std::vector<LengthCounts>& parts, std::vector<uint64_t> edges) {
  TokenLengthReport r;
  r.histogram = TokenHistogram(std::move(edges));
  std::map<uint64_t, uint64_t> all;
  for (const auto& p : parts) {
    r.malformed += p.malformed;
    for (auto [len, n] : p.lengths) all[len] += n;
  }
  for (auto [len, n] : all) {
    r.documents += n;
    r.tokens += len * n;
    r.histogram.add(len, n);
  }
  if (r.documents == 0) return r;
  r.mean = static_cast<double>(r.tokens) / static_cast<double>(r.documents);
  auto nearest_rank = [&](uint64_t pct) {
    const uint64_t rank = std::max<uint64_t>(1, (pct * r.documents + 99) / 100);
    uint64_t seen = 0;
    for (auto [len, n] : all) {
      seen += n;
      if (seen >= rank) return len;
    }
    return all.rbegin()->first;
  };
  r.p50 = nearest_rank(50);
  r.p90 = nearest_rank(90);
  r.p99 = nearest_rank(99);
  return r;
}

}  // namespace

TokenLengthReport token_length_histogram(std::span<const ShardText> shards, const Tokenizer& tokenizer,
                                         std::vector<uint64_t> bin_edges, int workers) {
  TokenHistogram check(bin_edges);
  std::vector<LengthCounts> parts(shards.size());
  parallel_for(shards.size(), workers, [&](size_t i) { parts[i] = count_lengths(shards[i], tokenizer); });
  return summarize(parts, std::move(bin_edges));
}

TokenLengthReport token_length_histogram(std::span<const fs::path> shards, const Tokenizer& tokenizer,
                                         std::vector<uint64_t> bin_edges, int workers) {
  TokenHistogram check(bin_edges);
  std::vector<LengthCounts> parts(shards.size());
  std::vector<std::string> errors(shards.size());
  parallel_for(shards.size(), workers, [&](size_t i) {
    try {
      parts[i] = count_lengths({shard_stem(shards[i]), read_shard_text(shards[i])}, tokenizer);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kShardUnreadable) throw;
      errors[i] = e.what();
      spdlog::error("{}", e.what());
    }
  });
  TokenLengthReport r = summarize(parts, std::move(bin_edges));
  for (size_t i = 0; i < shards.size(); ++i) {
    if (!errors[i].empty()) r.unreadable.push_back(shards[i].string());
  }
  return r;
}

json token_length_report_to_json(const TokenLengthReport& r) {
  json j = {{"documents", r.documents},
            {"tokens", r.tokens},
            {"malformed", r.malformed},
            {"mean", r.mean},
            {"p50", r.p50},
            {"p90", r.p90},
            {"p99", r.p99},
            {"histogram", {{"edges", r.histogram.edges()}, {"counts", r.histogram.counts()}}}};
  if (!r.unreadable.empty()) j["unreadable"] = r.unreadable;
  return j;
}

}  // namespace ufw
