#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "corpus.hpp"
#include "doctest.h"
#include "pipeline_fixture.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/filter.hpp"

using namespace ufw;
using namespace ufwtest;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result ufw_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string p(const fs::path& path) { return path.string(); }

void write_docs(const fs::path& path, const std::vector<LabeledExample>& docs, const std::string& prefix) {
  std::string body;
  for (size_t i = 0; i < docs.size(); ++i) {
    body += json{{"id", prefix + std::to_string(i)}, {"text", docs[i].text}}.dump() + "\n";
  }
  write_file_atomic(path, body);
}

}  // namespace

TEST_CASE("cli: help, unknown commands and bad flags") {
  const auto help = ufw_run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("Subcommands:") != std::string::npos);
  CHECK(help.out.find("pipeline") != std::string::npos);

  const auto sub_help = ufw_run({"verify", "report", "--help"});
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--baseline") != std::string::npos);

  const auto unknown = ufw_run({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("UnknownCommand") != std::string::npos);
  CHECK(unknown.err.find("Usage:") != std::string::npos);
  CHECK(unknown.out.empty());

  CHECK(ufw_run({}).code == 1);
  CHECK(ufw_run({"--workers", "0", "verify", "plan", "--candidate-tokens", "5"}).code == 1);
  CHECK(ufw_run({"--log-level", "loud", "verify", "plan", "--candidate-tokens", "5"}).code == 1);
}

TEST_CASE("cli: normalize and tokenize") {
  const fs::path dir = fs::temp_directory_path() / "ufw_cli_text";
  fs::create_directories(dir);
  write_file_atomic(dir / "in.txt", "Héllo   Wörld\n\n\n\nX");
  const auto n = ufw_run({"normalize", "--in", p(dir / "in.txt")});
  CHECK(n.code == 0);
  CHECK(n.out == "hello world\n\nx");

  write_file_atomic(dir / "docs.jsonl", "{\"id\":\"a\",\"text\":\"Ça  va\"}\nnot json\n");
  const auto nj = ufw_run({"normalize", "--jsonl", "--in", p(dir / "docs.jsonl")});
  CHECK(nj.code == 2);
  CHECK(nj.out == "{\"id\":\"a\",\"text\":\"ca va\"}\n");

  const auto t = ufw_run({"tokenize", "--in", p(dir / "in.txt")});
  CHECK(t.code == 0);
  CHECK(json::parse(t.out) == json{"Héllo", "Wörld", "\n", "\n", "\n", "\n", "X"});
  const auto tc = ufw_run({"tokenize", "--jsonl", "--count", "--normalize", "--in", p(dir / "docs.jsonl")});
  CHECK(tc.code == 2);
  CHECK(tc.out == "{\"id\":\"a\",\"tokens\":2}\n");
}

TEST_CASE("cli: seed pool, training, prediction and filtering end to end") {
  const fs::path dir = fs::temp_directory_path() / "ufw_cli_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto corpus = make_two_class_corpus(21, 150, 80, 60, 10, 30);
  std::vector<LabeledExample> pos, neg;
  for (const auto& ex : corpus.train) (ex.label ? pos : neg).push_back(ex);
  write_docs(dir / "pos.jsonl", pos, "p");
  write_docs(dir / "neg.jsonl", neg, "n");

  const json config = {{"classifier", classifier_config_to_json(small_config())}, {"seed", 9}};
  write_file_atomic(dir / "config.json", config.dump());
  const std::string cfg = p(dir / "config.json");
  const std::string store = p(dir / "pool");

  auto add = ufw_run({"--config", cfg, "seedpool", "--store", store, "add", "--name", "good", "--polarity",
                      "positive", "--source", "curated", "--docs", p(dir / "pos.jsonl")});
  REQUIRE(add.code == 0);
  CHECK(json::parse(add.out).at("version") == 1);
  add = ufw_run({"--config", cfg, "seedpool", "--store", store, "add", "--name", "raw", "--polarity", "negative",
                 "--docs", p(dir / "neg.jsonl")});
  REQUIRE(add.code == 0);
  CHECK(json::parse(add.out).at("parent_version") == 1);
  const auto mark = ufw_run({"seedpool", "--store", store, "mark", "--name", "good", "--factor", "3"});
  CHECK(mark.code == 0);
  CHECK(ufw_run({"seedpool", "--store", store, "mark", "--name", "good", "--factor", "9"}).code == 1);
  const auto show = ufw_run({"seedpool", "--store", store, "--version", "2", "show"});
  CHECK(show.code == 0);
  CHECK(json::parse(show.out).at("categories").size() == 2);

  const auto assemble = ufw_run({"--config", cfg, "seedpool", "--store", store, "assemble", "--target", "160",
                                 "--out", p(dir / "train.jsonl")});
  REQUIRE(assemble.code == 0);
  const auto again = ufw_run({"--config", cfg, "seedpool", "--store", store, "assemble", "--target", "160"});
  CHECK(again.out == read_file(dir / "train.jsonl"));

  const auto train1 = ufw_run({"--config", cfg, "classifier", "train", "--input", p(dir / "train.jsonl"), "--output",
                               p(dir / "m1.ufwc")});
  REQUIRE(train1.code == 0);
  const auto train2 = ufw_run({"--config", cfg, "classifier", "train", "--input", p(dir / "train.jsonl"), "--output",
                               p(dir / "m2.ufwc")});
  CHECK(read_file(dir / "m1.ufwc") == read_file(dir / "m2.ufwc"));
  CHECK(json::parse(train1.out).at("examples") == 160);

  write_docs(dir / "held.jsonl", corpus.held_out, "h");
  const auto pred = ufw_run({"classifier", "predict", "--model", p(dir / "m1.ufwc"), "--in", p(dir / "held.jsonl")});
  REQUIRE(pred.code == 0);
  size_t right = 0, n = 0;
  std::istringstream lines(pred.out);
  for (std::string line; std::getline(lines, line); ++n) {
    const auto j = json::parse(line);
    if ((j.at("label") == "positive") == (corpus.held_out[n].label == 1)) ++right;
  }
  CHECK(n == corpus.held_out.size());
  CHECK(right >= n * 95 / 100);

  // Score two shards plus a missing one: partial success.
  std::vector<LabeledExample> half_a(corpus.held_out.begin(), corpus.held_out.begin() + 60);
  std::vector<LabeledExample> half_b(corpus.held_out.begin() + 60, corpus.held_out.end());
  write_docs(dir / "s1.jsonl", half_a, "a");
  write_docs(dir / "s2.jsonl", half_b, "b");
  const auto partial = ufw_run({"--workers", "2", "filter", "score", "--model", p(dir / "m1.ufwc"), "--out-dir",
                                p(dir / "out"), p(dir / "s1.jsonl"), p(dir / "s2.jsonl"), p(dir / "missing.jsonl")});
  CHECK(partial.code == 2);
  CHECK(json::parse(partial.out).at("partial") == true);
  CHECK(partial.err.find("missing.jsonl") != std::string::npos);

  const auto full = ufw_run({"filter", "score", "--model", p(dir / "m1.ufwc"), "--out-dir", p(dir / "out2"),
                             p(dir / "s1.jsonl"), p(dir / "s2.jsonl")});
  CHECK(full.code == 0);
  const auto strict = ufw_run({"filter", "score", "--model", p(dir / "m1.ufwc"), "--threshold", "0.9", "--out-dir",
                               p(dir / "out3"), p(dir / "s1.jsonl"), p(dir / "s2.jsonl")});
  CHECK(strict.code == 0);
  const auto inter = ufw_run({"filter", "intersect", p(dir / "out2" / "kept.manifest"),
                              p(dir / "out3" / "kept.manifest")});
  CHECK(inter.code == 0);
  CHECK(inter.out == read_file(dir / "out3" / "kept.manifest"));
  CHECK(ufw_run({"filter", "intersect", p(dir / "out2" / "kept.manifest")}).code == 1);

  const auto stats = ufw_run({"filter", "stats", "--bins", "8,16,32", p(dir / "s1.jsonl"), p(dir / "s2.jsonl")});
  CHECK(stats.code == 0);
  CHECK(json::parse(stats.out).at("documents") == 120);
  CHECK(ufw_run({"filter", "stats", p(dir / "s1.jsonl"), p(dir / "nope.jsonl")}).code == 2);
}

TEST_CASE("cli: verify plan and report") {
  const fs::path dir = fs::temp_directory_path() / "ufw_cli_verify";
  fs::create_directories(dir);
  const auto steps = ufw_run({"verify", "plan", "--candidate-tokens", "120000000", "--rounding", "nearest_canonical"});
  CHECK(steps.code == 0);
  CHECK(json::parse(steps.out).at("computed_steps") == 500);
  CHECK(ufw_run({"verify", "plan", "--candidate-tokens", "0"}).code == 1);

  write_file_atomic(dir / "cand.json", R"([{"shard":"c0","tokens":40},{"shard":"c1","tokens":60}])");
  write_file_atomic(dir / "def.json", R"([{"shard":"d0","tokens":100000}])");
  const auto plan = ufw_run({"--seed", "3", "verify", "plan", "--candidate", p(dir / "cand.json"), "--default",
                             p(dir / "def.json"), "--batch-size", "1", "--seq-len", "1", "--rounding",
                             "nearest_canonical"});
  REQUIRE(plan.code == 0);
  const auto doc = json::parse(plan.out);
  CHECK(doc.at("computed_steps") == 1000);
  CHECK(doc.at("candidate_tokens") == 300);
  CHECK(doc.at("seed") == 3);

  const json base = {{"run_label", "FineWeb"},
                     {"scores",
                      {{"MMLU", 28.84}, {"ARC-C", 25.17}, {"ARC-E", 59.18}, {"CommonSenseQA", 34.32},
                       {"HellaSwag", 42.91}, {"OpenbookQA", 22.20}, {"PIQA", 73.29}, {"SIQA", 38.95},
                       {"Winogrande", 55.64}}}};
  const json cand = {{"run_label", "Ultra-FineWeb-en"},
                     {"scores",
                      {{"MMLU", 32.24}, {"ARC-C", 35.67}, {"ARC-E", 70.62}, {"CommonSenseQA", 36.45},
                       {"HellaSwag", 42.76}, {"OpenbookQA", 26.20}, {"PIQA", 73.67}, {"SIQA", 39.61},
                       {"Winogrande", 55.80}}}};
  write_file_atomic(dir / "base.json", base.dump());
  write_file_atomic(dir / "cand_scores.json", cand.dump());
  const json grouping = json::array({{{"name", "English"},
                                      {"metrics", {"MMLU", "ARC-C", "ARC-E", "CommonSenseQA", "HellaSwag",
                                                   "OpenbookQA", "PIQA", "SIQA", "Winogrande"}}}});
  write_file_atomic(dir / "grouping.json", grouping.dump());
  const auto report = ufw_run({"verify", "report", "--baseline", p(dir / "base.json"), "--candidate",
                               p(dir / "cand_scores.json"), "--grouping", p(dir / "grouping.json"), "--format", "json"});
  REQUIRE(report.code == 0);
  const auto r = json::parse(report.out);
  CHECK(std::abs(r.at("groups")[0].at("baseline_average").get<double>() - 42.278) <= 0.001);
  CHECK(std::abs(r.at("groups")[0].at("candidate_average").get<double>() - 45.891) <= 0.001);
  const auto table = ufw_run({"verify", "report", "--baseline", p(dir / "base.json"), "--candidate",
                              p(dir / "cand_scores.json"), "--grouping", p(dir / "grouping.json")});
  CHECK(table.out.find("45.891") != std::string::npos);
  const auto md = ufw_run({"verify", "report", "--baseline", p(dir / "base.json"), "--candidate",
                           p(dir / "cand_scores.json"), "--grouping", p(dir / "grouping.json"), "--format", "markdown"});
  CHECK(md.out.find("| *Average English* |") != std::string::npos);
  // The default grouping needs the Chinese metrics too.
  const auto missing = ufw_run({"verify", "report", "--baseline", p(dir / "base.json"), "--candidate",
                                p(dir / "cand_scores.json")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("MissingMetric") != std::string::npos);
}

TEST_CASE("cli: pipeline commands") {
  const fs::path root = fs::temp_directory_path() / "ufw_cli_pipeline";
  const auto config = make_pipeline_fixture(root);
  write_file_atomic(root / "pipeline.json", pipeline_config_to_json(config).dump(2));
  const std::string run = p(root / "run");

  const auto init = ufw_run({"pipeline", "--run", run, "init", "--settings", p(root / "pipeline.json")});
  REQUIRE(init.code == 0);
  CHECK(json::parse(init.out).at("status") == "awaiting_training_set");
  CHECK(ufw_run({"pipeline", "--run", run, "init", "--settings", p(root / "pipeline.json")}).code == 1);

  const auto step = ufw_run({"pipeline", "--run", run, "advance", "--step"});
  CHECK(json::parse(step.out).at("status") == "awaiting_classifier");
  const auto adv = ufw_run({"pipeline", "--run", run, "advance"});
  CHECK(json::parse(adv.out).at("status") == "awaiting_verification");
  // Nothing to do until a report arrives.
  const auto idle = ufw_run({"pipeline", "--run", run, "advance"});
  CHECK(idle.code == 0);
  CHECK(json::parse(idle.out).at("status") == "awaiting_verification");
  CHECK(ufw_run({"pipeline", "--run", run, "advance", "--step"}).code == 1);

  write_file_atomic(root / "report.json", eval_report_to_json(synthetic_report(true)).dump());
  const auto ingest = ufw_run({"pipeline", "--run", run, "ingest-report", "--report", p(root / "report.json")});
  CHECK(ingest.code == 0);
  CHECK(json::parse(ingest.out).at("status") == "verdict_ready");

  const auto status = ufw_run({"pipeline", "--run", run, "status"});
  CHECK(status.code == 0);
  CHECK(json::parse(status.out).at("journal_entries") == 4);
  const auto resumed = ufw_run({"pipeline", "--run", run, "resume"});
  CHECK(json::parse(resumed.out).at("round") == 1);

  const auto next = ufw_run({"pipeline", "--run", run, "advance"});
  CHECK(json::parse(next.out).at("round") == 2);
  CHECK(json::parse(next.out).at("status") == "awaiting_verification");

  fs::remove(root / "run" / "rounds" / "1" / "model.ufwc");
  const auto corrupt = ufw_run({"pipeline", "--run", run, "status"});
  CHECK(corrupt.code == 1);
  CHECK(corrupt.err.find("StateCorrupt") != std::string::npos);
}

TEST_CASE("cli: UFW_LOG sets the log level") {
  const fs::path dir = fs::temp_directory_path() / "ufw_cli_log";
  fs::create_directories(dir);
  write_file_atomic(dir / "docs.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\nbroken\n");
  ::setenv("UFW_LOG", "error", 1);
  const auto quiet = ufw_run({"normalize", "--jsonl", "--in", p(dir / "docs.jsonl")});
  ::unsetenv("UFW_LOG");
  CHECK(quiet.code == 2);
  CHECK(quiet.err.empty());
  const auto loud = ufw_run({"normalize", "--jsonl", "--in", p(dir / "docs.jsonl")});
  CHECK(loud.err.find("[warning]") != std::string::npos);
  const auto flag = ufw_run({"--log-level", "off", "normalize", "--jsonl", "--in", p(dir / "docs.jsonl")});
  CHECK(flag.err.empty());
}
