#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ufw {

enum class RoundingMode { kAsWrittenMax, kNearestCanonical };

std::string_view rounding_mode_name(RoundingMode m);
RoundingMode rounding_mode_from_name(std::string_view name);

// Allowed gap between the scheduled candidate share and candidate_weight.
inline constexpr double kMixtureTolerance = 0.005;

inline constexpr uint64_t kCanonicalSteps[] = {100, 500, 1000, 2500, 5000};

struct StepPlan {
  uint64_t total_tokens = 0;     // ceil(candidate_tokens * n_epoch / candidate_weight)
  uint64_t tokens_per_step = 0;  // global_batch_size * sequence_length
  uint64_t raw_steps = 0;        // ceil(total_tokens / tokens_per_step)
  uint64_t steps = 0;            // after rounding_mode
};

// candidate_weight is taken as an exact decimal with up to six places, so
// 0.3 divides as 3/10. Throws kNonPositiveTokens, kInvalidArgument.
StepPlan plan_steps(int64_t candidate_tokens, int n_epoch, uint64_t global_batch_size, uint64_t sequence_length,
                    RoundingMode mode, double candidate_weight = 0.3);

struct ManifestShard {
  std::string shard;
  uint64_t tokens = 0;
};

// JSON array of {"shard", "tokens"}.
std::vector<ManifestShard> token_manifest_from_json(const nlohmann::json& j);
nlohmann::json token_manifest_to_json(const std::vector<ManifestShard>& m);
uint64_t token_manifest_fingerprint(const std::vector<ManifestShard>& m);

struct AnnealPlan {
  double candidate_weight = 0.30;
  double default_weight = 0.70;
  uint64_t global_batch_size = 512;
  uint64_t sequence_length = 4096;
  int n_epoch = 3;
  RoundingMode rounding_mode = RoundingMode::kAsWrittenMax;
  double warmup_fraction = 0.1;
  double lr_max = 1e-3;
  double lr_min = 5e-5;
  uint64_t seed = 0;

  void validate() const;
};

AnnealPlan anneal_plan_from_json(const nlohmann::json& j);
nlohmann::json anneal_plan_to_json(const AnnealPlan& p);

enum class MixSource { kCandidate, kDefault };

// A contiguous token range [offset, offset + tokens) of one shard.
struct ScheduleEntry {
  MixSource source = MixSource::kCandidate;
  uint32_t shard = 0;  // index into the owning manifest
  uint32_t pass = 0;   // 0-based pass over that manifest
  uint64_t offset = 0;
  uint64_t tokens = 0;
};

struct Mixture {
  StepPlan steps;
  uint64_t candidate_tokens = 0;  // scheduled, including repeats
  uint64_t default_tokens = 0;
  uint32_t candidate_passes = 0;
  std::vector<ScheduleEntry> schedule;
};

// Candidate data is capped at n_epoch passes; the share may then fall
// short of candidate_weight by at most kMixtureTolerance.
//
// Splits the run into equal slots; every slot carries candidate and default
// tokens in the planned proportion (candidate first), so the share holds
// over any window a few slots wide. Each manifest is read as a stream of
// shards in a seeded order, reshuffled per pass.
//
// Throws kCandidateEpochOverflow, kInsufficientDefaultTokens, plus the
// plan_steps errors.
Mixture compose_mixture(const std::vector<ManifestShard>& candidate, const std::vector<ManifestShard>& defaults,
                        const AnnealPlan& plan);

// The full plan document: hyperparameters, steps, schedule, fingerprints.
nlohmann::json anneal_plan_document(const AnnealPlan& plan, const std::vector<ManifestShard>& candidate,
                                    const std::vector<ManifestShard>& defaults, const Mixture& mixture);

struct EvalScores {
  std::string run_label;
  std::map<std::string, double> scores;  // percentage points
};

EvalScores eval_scores_from_json(const nlohmann::json& j);
nlohmann::json eval_scores_to_json(const EvalScores& s);

struct MetricGroup {
  std::string name;
  std::vector<std::string> metrics;
};

// Groups in report order. The last group of the default grouping, Overall,
// is the union of the others.
struct MetricGrouping {
  std::vector<MetricGroup> groups;

  static MetricGrouping standard();
  // Appends Overall as the union of the given groups, in order.
  static MetricGrouping with_overall(std::vector<MetricGroup> groups);
  void validate() const;
};

// Either [{"name", "metrics"}...] (Overall appended) or an object with a
// "groups" array taken as is.
MetricGrouping grouping_from_json(const nlohmann::json& j);
nlohmann::json grouping_to_json(const MetricGrouping& g);

enum class Verdict { kImproved, kNeutral, kRegressed };
std::string_view verdict_name(Verdict v);

struct MetricDiff {
  std::string metric;
  double baseline = 0.0;
  double candidate = 0.0;
  double diff = 0.0;  // candidate - baseline
};

struct GroupResult {
  std::string name;
  std::vector<std::string> metrics;
  double baseline_average = 0.0;
  double candidate_average = 0.0;
  double diff = 0.0;
  Verdict verdict = Verdict::kNeutral;
};

struct EvalReport {
  std::string baseline_label;
  std::string candidate_label;
  double margin = 0.1;
  std::vector<MetricDiff> metrics;  // in grouping order, each metric once
  std::vector<GroupResult> groups;

  // No group regressed and at least one improved.
  bool improved() const;
};

// Throws kMissingMetric naming the absent metrics, kInvalidArgument for
// scores outside [0, 100].
EvalReport eval_report(const EvalScores& baseline, const EvalScores& candidate,
                       const MetricGrouping& grouping = MetricGrouping::standard(), double margin = 0.1);

nlohmann::json eval_report_to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
std::string render_table(const EvalReport& r);
std::string render_markdown(const EvalReport& r);

}  // namespace ufw
