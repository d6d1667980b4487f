#pragma once

// A small two-round pipeline setup: a seed pool, raw shards and a config
// whose anneal plan fits the sample.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "ufw/error.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/pipeline.hpp"
#include "ufw/seedpool.hpp"

namespace ufwtest {

namespace fs = std::filesystem;

struct SimulatedCrash : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds the pool and raw shards under `root` (wiped first) and returns the
// run config. The run directory is root / "run".
inline ufw::PipelineConfig make_pipeline_fixture(const fs::path& root, uint64_t seed = 5) {
  fs::remove_all(root);
  fs::create_directories(root / "raw");
  const auto corpus = make_two_class_corpus(seed, 200, 100, 100, 10, 30);

  ufw::SeedPoolManifest pool;
  const char* names[] = {"neg-a", "pos-a", "neg-b", "pos-b"};
  for (int c = 0; c < 4; ++c) {
    ufw::SeedCategory cat;
    cat.name = names[c];
    cat.polarity = c % 2 ? ufw::Polarity::kPositive : ufw::Polarity::kNegative;
    cat.source = "fixture";
    // Examples alternate labels; category c takes half of its label's docs.
    for (size_t i = 0; i < corpus.train.size(); ++i) {
      if (corpus.train[i].label == c % 2 && (i / 2) % 2 == static_cast<size_t>(c / 2)) {
        cat.documents.push_back(corpus.train[i].text);
      }
    }
    pool = ufw::add_category(pool, std::move(cat));
  }
  pool.parent_version.reset();
  ufw::SeedPoolStore(root / "pool").commit(pool);

  std::string a, b;
  for (size_t i = 0; i < corpus.held_out.size(); ++i) {
    const std::string line =
        nlohmann::json{{"id", "h" + std::to_string(i)}, {"text", corpus.held_out[i].text}}.dump() + "\n";
    (i % 3 ? a : b) += line;
  }
  ufw::write_file_atomic(root / "raw" / "web-a.jsonl", a);
  ufw::write_file_atomic(root / "raw" / "web-b.jsonl.gz", ufw::gzip(b));

  ufw::PipelineConfig c;
  c.classifier = small_config();
  c.classifier.epochs = 5;
  c.target_training_set = 200;
  c.sample_size = 120;
  c.seed = seed;
  c.verify.global_batch_size = 1;
  c.verify.sequence_length = 1;
  c.seed_pool = root / "pool";
  c.raw_shards = {root / "raw" / "web-a.jsonl", root / "raw" / "web-b.jsonl.gz"};
  c.default_manifest = {{"default-0", 400'000}, {"default-1", 400'000}};
  return c;
}

inline ufw::EvalReport synthetic_report(bool improved) {
  ufw::EvalScores base{"baseline", {}}, cand{"candidate", {}};
  const auto grouping = ufw::MetricGrouping::standard();
  double v = 30.0;
  for (const auto& m : grouping.groups.back().metrics) {
    base.scores[m] = v;
    cand.scores[m] = improved ? v + 1.0 : v - 1.0;
    v += 1.5;
  }
  return ufw::eval_report(base, cand, grouping);
}

// Drives a run to a terminal status, reopening after every simulated
// crash; reports ingested are always "improved".
inline ufw::RunState drive_to_end(const fs::path& run_dir, const ufw::PipelineConfig& config,
                                  const ufw::FaultHook& fault = {}) {
  for (int attempts = 0; attempts < 100; ++attempts) {
    try {
      bool has_journal = true;
      try {
        ufw::read_journal(run_dir);
      } catch (const ufw::Error&) {
        has_journal = false;
      }
      auto run = has_journal ? ufw::PipelineRun::open(run_dir, fault) : ufw::PipelineRun::init(run_dir, config, fault);
      while (!run.state().terminal()) {
        if (run.state().status == ufw::RunStatus::kAwaitingVerification) {
          run.ingest_report(synthetic_report(true));
        } else {
          run.step();
        }
      }
      return run.state();
    } catch (const SimulatedCrash&) {
    }
  }
  throw std::runtime_error("run did not finish");
}

}  // namespace ufwtest
