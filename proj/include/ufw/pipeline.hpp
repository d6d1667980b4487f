#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ufw/classifier.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/normalize.hpp"
#include "ufw/tokenize.hpp"
#include "ufw/verify.hpp"

namespace ufw {

struct PipelineConfig {
  int max_rounds = 2;
  uint64_t sample_size = 10'000;
  uint64_t target_training_set = 600'000;
  double balance = 0.5;
  double threshold = 0.5;
  ClassifierConfig classifier;
  TokenizerSpec tokenizer;
  NormalizePolicy normalize;
  AnnealPlan verify;
  uint64_t seed = 0;

  std::filesystem::path seed_pool;        // SeedPoolStore directory
  std::optional<uint64_t> pool_version;   // latest when unset
  std::vector<std::filesystem::path> raw_shards;
  std::vector<ManifestShard> default_manifest;

  void validate() const;
};

// Relative paths (seed_pool, raw_shards, tokenizer vocab) are resolved
// against `base_dir`. default_manifest may be inline or a path to a JSON file.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json pipeline_config_to_json(const PipelineConfig& c);

enum class RunStatus {
  kAwaitingTrainingSet,
  kAwaitingClassifier,
  kAwaitingVerification,
  kVerdictReady,
  kPromoted,
  kRejected,
};

std::string_view run_status_name(RunStatus s);
RunStatus run_status_from_name(std::string_view name);

// A file inside the run directory and the FNV-1a 64 of its bytes.
struct ArtifactRef {
  std::string path;  // relative to the run directory
  uint64_t fingerprint = 0;

  bool operator==(const ArtifactRef&) const = default;
};

struct RoundRecord {
  int round = 1;
  uint64_t pool_version = 0;
  std::optional<ArtifactRef> training_set;
  std::optional<ArtifactRef> model;
  std::optional<ArtifactRef> sample_scores;
  std::optional<ArtifactRef> anneal_plan;
  std::optional<ArtifactRef> eval_report;
  uint64_t sample_documents = 0;
  uint64_t sample_kept = 0;
  std::optional<bool> improved;

  bool operator==(const RoundRecord&) const = default;
};

struct RunState {
  std::string run_id;
  int round = 1;
  uint64_t pool_version = 0;
  RunStatus status = RunStatus::kAwaitingTrainingSet;
  ArtifactRef config;
  std::vector<RoundRecord> rounds;
  std::optional<uint64_t> promoted_model;

  bool terminal() const { return status == RunStatus::kPromoted || status == RunStatus::kRejected; }
  const RoundRecord& current() const { return rounds.back(); }
  bool operator==(const RunState&) const = default;
};

nlohmann::json run_state_to_json(const RunState& s);
RunState run_state_from_json(const nlohmann::json& j);

struct JournalEntry {
  uint64_t seq = 0;
  std::string event;
  RunState state;
};

// Valid entries in order. A torn final line is ignored; any other bad line
// throws kJournalUnreadable, as does a missing or empty journal.
std::vector<JournalEntry> read_journal(const std::filesystem::path& run_dir);

// Latest journaled state, after checking that the config, the seed pool
// version and every referenced artifact still match their fingerprints.
// Read-only; takes no lock. Throws kStateCorrupt, kJournalUnreadable.
RunState resume(const std::filesystem::path& run_dir);

// Called at named points of every transition:
//   "artifacts:<event>"  artifacts written, journal untouched
//   "torn:<event>"       half of the journal line written
//   "journaled:<event>"  journal line complete
// Tests throw from it to simulate a crash.
using FaultHook = std::function<void(std::string_view point)>;

// The single writer of a run directory, holding its lock.
//
// Layout:
//   config.json, journal.jsonl, .lock
//   rounds/<n>/training_set      JSONL {"text", "label"}, normalized
//   rounds/<n>/model.ufwc
//   rounds/<n>/sample_scores     JSONL {"id", "score", "kept"}
//   rounds/<n>/anneal_plan.json
//   rounds/<n>/eval_report.json
class PipelineRun {
 public:
  // Throws kInvalidArgument when run_dir already holds a journal.
  static PipelineRun init(const std::filesystem::path& run_dir, const PipelineConfig& config,
                          FaultHook fault = {});
  // resume() plus the lock; drops a torn journal tail.
  static PipelineRun open(const std::filesystem::path& run_dir, FaultHook fault = {});

  const RunState& state() const { return state_; }
  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }

  // One transition:
  //   awaiting_training_set -> awaiting_classifier      assemble and write the training set
  //   awaiting_classifier   -> awaiting_verification    train, score the sample, plan the anneal
  //   verdict_ready         -> promoted | rejected | next round's awaiting_training_set
  // Throws kInvalidTransition from awaiting_verification or a terminal status.
  const RunState& step();
  // Steps until awaiting_verification or a terminal status.
  const RunState& advance();
  // awaiting_verification -> verdict_ready.
  const RunState& ingest_report(const EvalReport& report);

 private:
  PipelineRun(std::filesystem::path dir, FaultHook fault);

  void commit(const std::string& event, RunState next);
  void fault(std::string_view point, const std::string& event) const;
  std::filesystem::path round_dir(int round) const;
  ArtifactRef write_artifact(int round, const std::string& name, std::string_view bytes) const;

  void assemble_step(RunState& next);
  void classifier_step(RunState& next);
  void verdict_step(RunState& next, std::string& event);

  std::filesystem::path dir_;
  FaultHook fault_;
  std::unique_ptr<FileLock> lock_;
  PipelineConfig config_;
  RunState state_;
  uint64_t next_seq_ = 0;
};

}  // namespace ufw
