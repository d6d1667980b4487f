#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "corpus.hpp"
#include "doctest.h"
#include "ufw/error.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/filter.hpp"

namespace fs = std::filesystem;
using namespace ufw;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

std::string jsonl(const std::vector<std::pair<std::string, std::string>>& docs) {
  std::string out;
  for (const auto& [id, text] : docs) out += json{{"id", id}, {"text", text}}.dump() + "\n";
  return out;
}

struct Fixture {
  ufwtest::TwoClassCorpus corpus = ufwtest::make_two_class_corpus(11, 60, 40, 0, 5, 20);
  ClassifierModel model = ufwtest::small_model(corpus);
  Tokenizer tok = Tokenizer::load({});
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// Random shards mixing both classes, unseen words, empty texts and the
// occasional malformed line.
std::vector<ShardText> random_shards(std::mt19937_64& rng, const Fixture& f) {
  std::vector<std::string> mixed = f.corpus.positive_words;
  mixed.insert(mixed.end(), f.corpus.negative_words.begin(), f.corpus.negative_words.end());
  for (int i = 0; i < 30; ++i) mixed.push_back(ufwtest::random_word(rng, 2, 8));
  std::vector<ShardText> shards(1 + rng() % 6);
  int next_id = 0;
  for (size_t s = 0; s < shards.size(); ++s) {
    shards[s].name = "shard" + std::to_string(s);
    const size_t n = rng() % 12;
    for (size_t i = 0; i < n; ++i) {
      const int kind = static_cast<int>(rng() % 10);
      if (kind == 0) {
        shards[s].content += "{not json\n";
      } else if (kind == 1) {
        shards[s].content += json{{"text", ""}}.dump() + "\n";
      } else {
        json j = {{"text", ufwtest::random_doc(rng, mixed, 1, 30)}};
        if (kind != 2) j["id"] = "d" + std::to_string(next_id++);
        shards[s].content += j.dump() + "\n";
      }
    }
  }
  return shards;
}

std::set<std::string> kept_ids(const std::vector<ShardScores>& scores) {
  std::set<std::string> out;
  for (const auto& s : scores) {
    for (const auto& d : s.scored) {
      if (d.kept) out.insert(d.id);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("filter: document parsing") {
  const auto d = parse_document(R"({"text":"hi","source":"web","meta":{"lang":"en"}})", "s0", 7);
  CHECK(d.id == "s0:7");
  CHECK(d.text == "hi");
  CHECK(d.source == "web");
  CHECK(d.meta.at("lang") == "en");
  CHECK(parse_document(R"({"id":"x","text":""})", "s0", 1).id == "x");

  for (const char* bad : {"{", "[]", R"({"id":"x"})", R"({"text":3})", R"({"id":5,"text":"a"})",
                          R"({"id":"","text":"a"})", R"({"id":"a\nb","text":"a"})",
                          R"({"text":"a","meta":{"k":1}})", "{\"text\":\"\xff\"}"}) {
    CHECK(code_of([&] { parse_document(bad, "s", 1); }) == ErrorCode::kMalformedRecord);
  }
  try {
    parse_document("{", "shard9", 42);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("shard9:42") != std::string::npos);
  }
  const json round = document_to_json(d);
  CHECK(parse_document(round.dump(), "other", 1).meta == d.meta);
}

TEST_CASE("filter: empty corpus") {
  const auto& f = fixture();
  const auto scores = score_shards(f.model, f.tok, std::vector<ShardText>{}, {});
  CHECK(scores.empty());
  const auto one = score_shard(f.model, f.tok, {"empty", ""}, {});
  CHECK(one.scored.empty());
  CHECK(one.stats.documents_total == 0);
  CHECK(one.stats.documents_kept == 0);
  CHECK(one.stats.tokens_total == 0);
}

TEST_CASE("filter: zero-feature document scores 0.5 and is kept") {
  const auto& f = fixture();
  const auto s = score_shard(f.model, f.tok, {"z", jsonl({{"a", ""}, {"b", "   "}})}, {});
  REQUIRE(s.scored.size() == 2);
  for (const auto& d : s.scored) {
    CHECK(d.score == 0.5);
    CHECK(d.kept);
  }
  CHECK(s.stats.zero_feature == 2);
  ScoreOptions strict;
  strict.threshold = std::nextafter(0.5, 1.0);
  CHECK(!score_shard(f.model, f.tok, {"z", jsonl({{"a", ""}})}, strict).scored[0].kept);
}

TEST_CASE("filter: classes separate and score is p(positive)") {
  const auto& f = fixture();
  std::mt19937_64 rng(5);
  std::vector<std::pair<std::string, std::string>> docs;
  for (int i = 0; i < 20; ++i) {
    docs.push_back({"p" + std::to_string(i), ufwtest::random_doc(rng, f.corpus.positive_words, 10, 20)});
    docs.push_back({"n" + std::to_string(i), ufwtest::random_doc(rng, f.corpus.negative_words, 10, 20)});
  }
  const auto s = score_shard(f.model, f.tok, {"c", jsonl(docs)}, {});
  for (size_t i = 0; i < docs.size(); ++i) {
    const double p = f.model.positive_probability(normalize_text(docs[i].second), f.tok);
    CHECK(s.scored[i].score == p);
    CHECK(s.scored[i].kept == (docs[i].first[0] == 'p'));
  }
}

TEST_CASE("filter: partition, monotonicity, parallel equals serial") {
  const auto& f = fixture();
  std::mt19937_64 rng(2024);
  for (int c = 0; c < 200; ++c) {
    const auto shards = random_shards(rng, f);
    ScoreOptions lo;
    lo.threshold = static_cast<double>(rng() % 1001) / 1000.0;
    ScoreOptions hi = lo;
    hi.threshold = std::min(1.0, lo.threshold + static_cast<double>(rng() % 300) / 1000.0);
    const auto serial = score_shards(f.model, f.tok, shards, lo);

    size_t lines = 0;
    for (const auto& s : shards) lines += ufwtest::count_char(s.content, '\n');
    FilterStats total;
    std::set<std::string> all, kept, rejected;
    for (const auto& s : serial) {
      total.merge(s.stats);
      for (const auto& d : s.scored) {
        CHECK(all.insert(d.id).second);
        (d.kept ? kept : rejected).insert(d.id);
        CHECK(d.kept == (d.score >= lo.threshold));
      }
    }
    CHECK(total.documents_total == lines);
    CHECK(total.documents_total == kept.size() + rejected.size() + total.malformed);
    CHECK(total.documents_kept == kept.size());
    uint64_t mass = 0;
    for (auto v : total.score_histogram) mass += v;
    CHECK(mass == all.size());

    const auto raised = kept_ids(score_shards(f.model, f.tok, shards, hi));
    CHECK(std::includes(kept.begin(), kept.end(), raised.begin(), raised.end()));

    for (int workers : {4, 16}) {
      ScoreOptions par = lo;
      par.workers = workers;
      CHECK(kept_ids(score_shards(f.model, f.tok, shards, par)) == kept);
    }
  }
}

TEST_CASE("filter: manifests and intersect") {
  KeepManifest a{7, {"a", "b", "c"}};
  KeepManifest b{7, {"b", "c", "d"}};
  const std::vector<KeepManifest> ab{a, b};
  CHECK(intersect(ab).ids == std::vector<std::string>{"b", "c"});
  const std::vector<KeepManifest> aa{a, a};
  CHECK(intersect(aa) == a);
  CHECK(parse_manifest(format_manifest(a)) == a);
  CHECK(format_manifest(a).starts_with("# corpus-fingerprint 0000000000000007\n"));

  KeepManifest other{8, {"a"}};
  const std::vector<KeepManifest> mismatch{a, other};
  CHECK(code_of([&] { intersect(mismatch); }) == ErrorCode::kCorpusMismatch);
  const std::vector<KeepManifest> single{a};
  CHECK(code_of([&] { intersect(single); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { parse_manifest("a\nb\n"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { parse_manifest("# corpus-fingerprint 01\nb\na\n"); }) == ErrorCode::kInvalidArgument);

  std::mt19937_64 rng(3);
  for (int c = 0; c < 20; ++c) {
    std::vector<KeepManifest> sets(3);
    for (auto& m : sets) {
      m.corpus_fingerprint = 1;
      std::set<std::string> ids;
      while (ids.size() < 1000) ids.insert("id" + std::to_string(rng() % 3000));
      m.ids.assign(ids.begin(), ids.end());
    }
    std::vector<std::string> brute;
    for (const auto& x : sets[0].ids) {
      bool in1 = false, in2 = false;
      for (const auto& y : sets[1].ids) in1 = in1 || x == y;
      for (const auto& z : sets[2].ids) in2 = in2 || x == z;
      if (in1 && in2) brute.push_back(x);
    }
    CHECK(intersect(sets).ids == brute);
  }
}

TEST_CASE("filter: corpus fingerprint ignores shard order") {
  const std::vector<uint64_t> a{1, 2, 3};
  const std::vector<uint64_t> b{3, 1, 2};
  const std::vector<uint64_t> c{1, 2};
  CHECK(corpus_fingerprint(a) == corpus_fingerprint(b));
  CHECK(corpus_fingerprint(a) != corpus_fingerprint(c));
}

TEST_CASE("filter: token length histogram") {
  const Tokenizer tok = Tokenizer::load({});
  const std::vector<ShardText> two{{"s", jsonl({{"a", "x y z"}, {"b", "1 2 3 4 5"}})}};
  auto r = token_length_histogram(two, tok, {4, 8});
  CHECK(r.mean == 4.0);
  CHECK(r.histogram.counts() == std::vector<uint64_t>{1, 1, 0});
  CHECK(r.p50 == 3);
  CHECK(r.p99 == 5);

  const std::vector<ShardText> empty{{"s", jsonl({{"a", ""}})}};
  r = token_length_histogram(empty, tok, {4, 8});
  CHECK(r.mean == 0.0);
  CHECK(r.histogram.counts()[0] == 1);

  CHECK(code_of([] { TokenHistogram h({4, 4}); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { TokenHistogram h({0, 4}); }) == ErrorCode::kInvalidArgument);

  std::mt19937_64 rng(8);
  std::vector<std::pair<std::string, std::string>> docs;
  std::vector<uint64_t> lengths;
  for (int i = 0; i < 1000; ++i) {
    const size_t n = rng() % 200;
    std::string text;
    for (size_t w = 0; w < n; ++w) text += "w ";
    docs.push_back({std::to_string(i), text});
    lengths.push_back(n);
  }
  const std::vector<uint64_t> edges{10, 50, 100, 150};
  const std::vector<ShardText> big{{"a", jsonl({docs.begin(), docs.begin() + 400})},
                                   {"b", jsonl({docs.begin() + 400, docs.end()})}};
  r = token_length_histogram(big, tok, edges, 3);
  std::vector<uint64_t> brute(edges.size() + 1, 0);
  uint64_t sum = 0;
  for (uint64_t n : lengths) {
    size_t b = 0;
    while (b < edges.size() && n >= edges[b]) ++b;
    ++brute[b];
    sum += n;
  }
  CHECK(r.histogram.counts() == brute);
  CHECK(r.tokens == sum);
  CHECK(r.mean == static_cast<double>(sum) / 1000.0);
  std::sort(lengths.begin(), lengths.end());
  CHECK(r.p50 == lengths[499]);
  CHECK(r.p90 == lengths[899]);
  CHECK(r.p99 == lengths[989]);
}

TEST_CASE("filter: stats json round trip") {
  const auto& f = fixture();
  std::mt19937_64 rng(4);
  const auto shards = random_shards(rng, f);
  FilterStats total;
  for (const auto& s : score_shards(f.model, f.tok, shards, {})) total.merge(s.stats);
  CHECK(filter_stats_from_json(filter_stats_to_json(total)) == total);
}

TEST_CASE("filter: file run with gzip, unreadable shard and restart") {
  const auto& f = fixture();
  const fs::path dir = fs::temp_directory_path() / "ufw_filter_run";
  fs::remove_all(dir);
  fs::create_directories(dir / "in");
  const fs::path model_path = dir / "model.ufwc";
  f.model.save(model_path);

  std::mt19937_64 rng(9);
  std::vector<std::pair<std::string, std::string>> a, b;
  for (int i = 0; i < 15; ++i) {
    a.push_back({"a" + std::to_string(i), ufwtest::random_doc(rng, f.corpus.positive_words, 5, 15)});
    b.push_back({"b" + std::to_string(i), ufwtest::random_doc(rng, f.corpus.negative_words, 5, 15)});
  }
  write_file_atomic(dir / "in/a.jsonl", jsonl(a));
  write_file_atomic(dir / "in/b.jsonl.gz", gzip(jsonl(b) + "{broken\n"));
  const std::vector<fs::path> shards{dir / "in/a.jsonl", dir / "in/b.jsonl.gz", dir / "in/missing.jsonl"};

  ScoreOptions opt;
  opt.workers = 2;
  const auto run = score_corpus(model_path, f.tok, shards, dir / "out", opt);
  CHECK(run.partial);
  CHECK(!run.shards[2].ok);
  CHECK(run.shards[0].ok);
  CHECK(run.shards[1].ok);
  CHECK(run.stats.documents_total == 31);
  CHECK(run.stats.malformed == 1);
  CHECK(run.kept.ids.size() == run.stats.documents_kept);
  CHECK(fs::exists(dir / "out/kept/b.jsonl"));
  CHECK(read_manifest(dir / "out/kept.manifest") == run.kept);

  // kept and rejected streams partition the input, each in input order.
  std::vector<std::string> kept_order, rejected_order;
  for (const char* stream : {"kept", "rejected"}) {
    const std::string text = read_file(dir / "out" / stream / "a.jsonl");
    size_t pos = 0;
    while (pos < text.size()) {
      const size_t nl = text.find('\n', pos);
      const json j = json::parse(text.substr(pos, nl - pos));
      (std::string(stream) == "kept" ? kept_order : rejected_order).push_back(j.at("id"));
      CHECK((j.at("score").get<double>() >= 0.5) == (std::string(stream) == "kept"));
      pos = nl + 1;
    }
  }
  CHECK(kept_order.size() + rejected_order.size() == a.size());
  CHECK(std::is_sorted(kept_order.begin(), kept_order.end(), [](const std::string& x, const std::string& y) {
    return std::stoi(x.substr(1)) < std::stoi(y.substr(1));
  }));

  const std::string stats_before = read_file(dir / "out/stats.json");
  // A torn line at the end of the ledger is ignored on restart.
  append_durable(dir / "out/ledger.jsonl", "{\"run\":");
  const auto again = score_corpus(model_path, f.tok, shards, dir / "out", opt);
  CHECK(again.shards[0].resumed);
  CHECK(again.shards[1].resumed);
  CHECK(again.kept == run.kept);
  CHECK(again.stats == run.stats);
  CHECK(read_file(dir / "out/stats.json") == stats_before);

  // A different threshold invalidates the ledger.
  ScoreOptions strict = opt;
  strict.threshold = 0.9;
  const auto rescored = score_corpus(model_path, f.tok, shards, dir / "out", strict);
  CHECK(!rescored.shards[0].resumed);
  CHECK(std::includes(run.kept.ids.begin(), run.kept.ids.end(), rescored.kept.ids.begin(),
                      rescored.kept.ids.end()));

  // A corrupt gzip shard is unreadable, not fatal.
  write_file_atomic(dir / "in/c.jsonl.gz", "not gzip at all");
  const std::vector<fs::path> with_bad{dir / "in/a.jsonl", dir / "in/c.jsonl.gz"};
  const auto bad = score_corpus(model_path, f.tok, with_bad, dir / "out2", opt);
  CHECK(bad.partial);
  CHECK(!bad.shards[1].ok);
  fs::remove_all(dir);
}
