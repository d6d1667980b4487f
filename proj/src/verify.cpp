#include "ufw/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "ufw/error.hpp"
#include "ufw/hash.hpp"
#include "ufw/rng.hpp"

using nlohmann::json;

namespace ufw {

using u128 = unsigned __int128;

std::string_view rounding_mode_name(RoundingMode m) {
  return m == RoundingMode::kAsWrittenMax ? "as_written_max" : "nearest_canonical";
}

RoundingMode rounding_mode_from_name(std::string_view name) {
  if (name == "as_written_max") return RoundingMode::kAsWrittenMax;
  if (name == "nearest_canonical") return RoundingMode::kNearestCanonical;
  throw Error(ErrorCode::kInvalidArgument, "unknown rounding mode '" + std::string(name) + "'");
}

namespace {

struct Ratio {
  uint64_t num;
  uint64_t den;
};

Ratio weight_ratio(double w) {
  if (!(w > 0.0 && w < 1.0)) throw Error(ErrorCode::kInvalidArgument, "candidate weight must be in (0, 1)");
  const auto num = static_cast<uint64_t>(std::llround(w * 1e6));
  if (std::fabs(static_cast<double>(num) / 1e6 - w) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "candidate weight needs at most six decimal places");
  }
  uint64_t a = num, b = 1'000'000;
  while (b) a = std::exchange(b, a % b);
  return {num / a, 1'000'000 / a};
}

uint64_t checked(u128 v, const char* what) {
  if (v > UINT64_MAX) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " overflows 64 bits");
  return static_cast<uint64_t>(v);
}

}  // namespace

StepPlan plan_steps(int64_t candidate_tokens, int n_epoch, uint64_t global_batch_size, uint64_t sequence_length,
                    RoundingMode mode, double candidate_weight) {
  if (candidate_tokens <= 0) {
    throw Error(ErrorCode::kNonPositiveTokens,
                "candidate token count must be positive, got " + std::to_string(candidate_tokens));
  }
  if (n_epoch < 3 || n_epoch > 5) throw Error(ErrorCode::kInvalidArgument, "n_epoch must be in [3, 5]");
  if (global_batch_size == 0 || sequence_length == 0) {
    throw Error(ErrorCode::kInvalidArgument, "batch size and sequence length must be positive");
  }
  const Ratio w = weight_ratio(candidate_weight);
  StepPlan p;
  const u128 scaled = static_cast<u128>(candidate_tokens) * static_cast<u128>(n_epoch) * w.den;
  p.total_tokens = checked((scaled + w.num - 1) / w.num, "total tokens");
  p.tokens_per_step = checked(static_cast<u128>(global_batch_size) * sequence_length, "tokens per step");
  p.raw_steps = (p.total_tokens + p.tokens_per_step - 1) / p.tokens_per_step;
  if (mode == RoundingMode::kAsWrittenMax) {
    p.steps = std::max<uint64_t>(p.raw_steps, 5000);
  } else {
    p.steps = kCanonicalSteps[0];
    for (uint64_t c : kCanonicalSteps) {
      const uint64_t dc = c > p.raw_steps ? c - p.raw_steps : p.raw_steps - c;
      const uint64_t dbest = p.steps > p.raw_steps ? p.steps - p.raw_steps : p.raw_steps - p.steps;
      if (dc <= dbest) p.steps = c;  // ascending order, so ties go to the larger
    }
  }
  return p;
}

// ---------------------------------------------------------------- manifests

std::vector<ManifestShard> token_manifest_from_json(const json& j) {
  try {
    const json& arr = j.is_object() ? j.at("shards") : j;
    if (!arr.is_array()) throw Error(ErrorCode::kInvalidArgument, "token manifest must be an array");
    std::vector<ManifestShard> out;
    for (const auto& e : arr) out.push_back({e.at("shard").get<std::string>(), e.at("tokens").get<uint64_t>()});
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad token manifest: ") + e.what());
  }
}

json token_manifest_to_json(const std::vector<ManifestShard>& m) {
  json arr = json::array();
  for (const auto& s : m) arr.push_back({{"shard", s.shard}, {"tokens", s.tokens}});
  return arr;
}

uint64_t token_manifest_fingerprint(const std::vector<ManifestShard>& m) {
  return fnv1a64(token_manifest_to_json(m).dump());
}

// -------------------------------------------------------------------- plans

void AnnealPlan::validate() const {
  if (candidate_weight + default_weight != 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "candidate_weight + default_weight must equal 1");
  }
  weight_ratio(candidate_weight);
  if (n_epoch < 3 || n_epoch > 5) throw Error(ErrorCode::kInvalidArgument, "n_epoch must be in [3, 5]");
  if (global_batch_size == 0 || sequence_length == 0) {
    throw Error(ErrorCode::kInvalidArgument, "batch size and sequence length must be positive");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "warmup_fraction must be in [0, 1)");
  }
  if (!(lr_min > 0.0 && lr_min <= lr_max)) throw Error(ErrorCode::kInvalidArgument, "need 0 < lr_min <= lr_max");
}

AnnealPlan anneal_plan_from_json(const json& j) {
  AnnealPlan p;
  try {
    p.candidate_weight = j.value("candidate_weight", p.candidate_weight);
    p.default_weight = j.value("default_weight", 1.0 - p.candidate_weight);
    p.global_batch_size = j.value("global_batch_size", p.global_batch_size);
    p.sequence_length = j.value("sequence_length", p.sequence_length);
    p.n_epoch = j.value("n_epoch", p.n_epoch);
    if (j.contains("rounding_mode")) p.rounding_mode = rounding_mode_from_name(j.at("rounding_mode").get<std::string>());
    p.warmup_fraction = j.value("warmup_fraction", p.warmup_fraction);
    p.lr_max = j.value("lr_max", p.lr_max);
    p.lr_min = j.value("lr_min", p.lr_min);
    p.seed = j.value("seed", p.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad anneal plan: ") + e.what());
  }
  p.validate();
  return p;
}

json anneal_plan_to_json(const AnnealPlan& p) {
  return {{"candidate_weight", p.candidate_weight},
          {"default_weight", p.default_weight},
          {"global_batch_size", p.global_batch_size},
          {"sequence_length", p.sequence_length},
          {"n_epoch", p.n_epoch},
          {"rounding_mode", rounding_mode_name(p.rounding_mode)},
          {"warmup_fraction", p.warmup_fraction},
          {"lr_max", p.lr_max},
          {"lr_min", p.lr_min},
          {"seed", p.seed}};
}

namespace {

// Reads a manifest as one token stream, pass after pass, each pass in its
// own seeded shard order.
class ShardStream {
 public:
  ShardStream(const std::vector<ManifestShard>& m, MixSource source, uint64_t seed)
      : manifest_(m), source_(source), rng_(seed) {
    next_pass();
  }

  void take(uint64_t n, std::vector<ScheduleEntry>& out) {
    while (n > 0) {
      while (pos_ == order_.size() || manifest_[order_[pos_]].tokens == offset_) {
        if (pos_ < order_.size()) {
          ++pos_;
          offset_ = 0;
        }
        if (pos_ == order_.size()) {
          ++pass_;
          next_pass();
        }
      }
      const uint32_t shard = order_[pos_];
      const uint64_t chunk = std::min(n, manifest_[shard].tokens - offset_);
      ScheduleEntry* last = out.empty() ? nullptr : &out.back();
      if (last && last->source == source_ && last->shard == shard && last->pass == pass_ &&
          last->offset + last->tokens == offset_) {
        last->tokens += chunk;
      } else {
        out.push_back({source_, shard, pass_, offset_, chunk});
      }
      offset_ += chunk;
      n -= chunk;
    }
  }

 private:
  void next_pass() {
    order_.clear();
    for (uint32_t i = 0; i < manifest_.size(); ++i) {
      if (manifest_[i].tokens > 0) order_.push_back(i);
    }
    rng_.shuffle(std::span<uint32_t>(order_));
    pos_ = 0;
    offset_ = 0;
  }

  const std::vector<ManifestShard>& manifest_;
  MixSource source_;
  Rng rng_;
  std::vector<uint32_t> order_;
  size_t pos_ = 0;
  uint64_t offset_ = 0;
  uint32_t pass_ = 0;
};

uint64_t total_tokens(const std::vector<ManifestShard>& m) {
  u128 t = 0;
  for (const auto& s : m) t += s.tokens;
  return checked(t, "manifest token total");
}

}  // namespace

Mixture compose_mixture(const std::vector<ManifestShard>& candidate, const std::vector<ManifestShard>& defaults,
                        const AnnealPlan& plan) {
  plan.validate();
  const uint64_t cand_total = total_tokens(candidate);
  const uint64_t def_total = total_tokens(defaults);
  Mixture mix;
  mix.steps = plan_steps(static_cast<int64_t>(std::min<uint64_t>(cand_total, INT64_MAX)), plan.n_epoch,
                         plan.global_batch_size, plan.sequence_length, plan.rounding_mode, plan.candidate_weight);
  const uint64_t total = checked(static_cast<u128>(mix.steps.steps) * mix.steps.tokens_per_step, "plan tokens");
  const Ratio w = weight_ratio(plan.candidate_weight);
  mix.candidate_tokens = static_cast<uint64_t>((static_cast<u128>(total) * w.num + w.den / 2) / w.den);

  // Rounding the step count up can ask for a sliver more candidate data
  // than n_epoch passes hold; cap at n_epoch passes while the share stays
  // within tolerance of the weight.
  const u128 cap = static_cast<u128>(cand_total) * static_cast<u128>(plan.n_epoch);
  if (mix.candidate_tokens > cap) {
    const double capped = static_cast<double>(cap) / static_cast<double>(total);
    if (plan.candidate_weight - capped > kMixtureTolerance) {
      throw Error(ErrorCode::kCandidateEpochOverflow,
                  "plan needs " + std::to_string(mix.candidate_tokens) + " candidate tokens, more than " +
                      std::to_string(plan.n_epoch) + " passes over " + std::to_string(cand_total));
    }
    mix.candidate_tokens = static_cast<uint64_t>(cap);
  }
  mix.default_tokens = total - mix.candidate_tokens;
  const uint64_t passes = (mix.candidate_tokens + cand_total - 1) / cand_total;
  if (def_total < mix.default_tokens) {
    throw Error(ErrorCode::kInsufficientDefaultTokens, "plan needs " + std::to_string(mix.default_tokens) +
                                                           " default tokens, manifest has " +
                                                           std::to_string(def_total));
  }
  mix.candidate_passes = static_cast<uint32_t>(passes);

  ShardStream cand(candidate, MixSource::kCandidate, splitmix64(plan.seed ^ fnv1a64("candidate")));
  ShardStream def(defaults, MixSource::kDefault, splitmix64(plan.seed ^ fnv1a64("default")));
  const uint64_t slots = std::min<uint64_t>(2000, total);
  auto cut = [&](uint64_t amount, uint64_t k) {
    return static_cast<uint64_t>(static_cast<u128>(amount) * k / slots);
  };
  for (uint64_t k = 0; k < slots; ++k) {
    cand.take(cut(mix.candidate_tokens, k + 1) - cut(mix.candidate_tokens, k), mix.schedule);
    def.take(cut(mix.default_tokens, k + 1) - cut(mix.default_tokens, k), mix.schedule);
  }
  return mix;
}

json anneal_plan_document(const AnnealPlan& plan, const std::vector<ManifestShard>& candidate,
                          const std::vector<ManifestShard>& defaults, const Mixture& mixture) {
  json schedule = json::array();
  for (const auto& e : mixture.schedule) {
    const auto& shard = (e.source == MixSource::kCandidate ? candidate : defaults)[e.shard].shard;
    schedule.push_back({{"source", e.source == MixSource::kCandidate ? "candidate" : "default"},
                        {"shard", shard},
                        {"pass", e.pass},
                        {"offset", e.offset},
                        {"tokens", e.tokens}});
  }
  const uint64_t total = mixture.candidate_tokens + mixture.default_tokens;
  json doc = anneal_plan_to_json(plan);
  doc["lr_decay"] = "exponential";
  doc["tokens_per_step"] = mixture.steps.tokens_per_step;
  doc["total_token"] = mixture.steps.total_tokens;
  doc["raw_steps"] = mixture.steps.raw_steps;
  doc["computed_steps"] = mixture.steps.steps;
  doc["canonical_steps"] = kCanonicalSteps;
  doc["plan_tokens"] = total;
  doc["candidate_tokens"] = mixture.candidate_tokens;
  doc["default_tokens"] = mixture.default_tokens;
  doc["candidate_fraction"] = total ? static_cast<double>(mixture.candidate_tokens) / static_cast<double>(total) : 0.0;
  doc["candidate_passes"] = mixture.candidate_passes;
  doc["candidate_manifest"] = {{"fingerprint", to_hex(token_manifest_fingerprint(candidate))},
                               {"shards", token_manifest_to_json(candidate)}};
  doc["default_manifest"] = {{"fingerprint", to_hex(token_manifest_fingerprint(defaults))},
                             {"shards", token_manifest_to_json(defaults)}};
  doc["schedule"] = std::move(schedule);
  return doc;
}

// ------------------------------------------------------------------ reports

EvalScores eval_scores_from_json(const json& j) {
  try {
    EvalScores s;
    s.run_label = j.at("run_label").get<std::string>();
    for (auto& [k, v] : j.at("scores").items()) s.scores[k] = v.get<double>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad eval scores: ") + e.what());
  }
}

json eval_scores_to_json(const EvalScores& s) { return {{"run_label", s.run_label}, {"scores", s.scores}}; }

MetricGrouping MetricGrouping::standard() {
  return with_overall({{"English",
                        {"MMLU", "ARC-C", "ARC-E", "CommonSenseQA", "HellaSwag", "OpenbookQA", "PIQA", "SIQA",
                         "Winogrande"}},
                       {"Chinese", {"C-Eval", "CMMLU"}}});
}

MetricGrouping MetricGrouping::with_overall(std::vector<MetricGroup> groups) {
  MetricGroup overall{"Overall", {}};
  for (const auto& g : groups) overall.metrics.insert(overall.metrics.end(), g.metrics.begin(), g.metrics.end());
  MetricGrouping out{std::move(groups)};
  out.groups.push_back(std::move(overall));
  out.validate();
  return out;
}

void MetricGrouping::validate() const {
  if (groups.empty()) throw Error(ErrorCode::kInvalidArgument, "grouping has no groups");
  std::set<std::string> names;
  std::set<std::string> seen;
  for (const auto& g : groups) {
    if (g.metrics.empty()) throw Error(ErrorCode::kInvalidArgument, "group '" + g.name + "' is empty");
    if (!names.insert(g.name).second) throw Error(ErrorCode::kInvalidArgument, "duplicate group '" + g.name + "'");
    if (g.name == "Overall") continue;
    for (const auto& m : g.metrics) {
      if (!seen.insert(m).second) {
        throw Error(ErrorCode::kInvalidArgument, "metric '" + m + "' appears in two groups");
      }
    }
  }
}

MetricGrouping grouping_from_json(const json& j) {
  try {
    auto parse = [](const json& arr) {
      std::vector<MetricGroup> groups;
      for (const auto& g : arr) {
        groups.push_back({g.at("name").get<std::string>(), g.at("metrics").get<std::vector<std::string>>()});
      }
      return groups;
    };
    if (j.is_array()) return MetricGrouping::with_overall(parse(j));
    MetricGrouping g{parse(j.at("groups"))};
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad grouping: ") + e.what());
  }
}

json grouping_to_json(const MetricGrouping& g) {
  json arr = json::array();
  for (const auto& grp : g.groups) arr.push_back({{"name", grp.name}, {"metrics", grp.metrics}});
  return {{"groups", arr}};
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kImproved:
      return "improved";
    case Verdict::kRegressed:
      return "regressed";
    case Verdict::kNeutral:
      break;
  }
  return "neutral";
}

bool EvalReport::improved() const {
  bool any = false;
  for (const auto& g : groups) {
    if (g.verdict == Verdict::kRegressed) return false;
    any = any || g.verdict == Verdict::kImproved;
  }
  return any;
}

EvalReport eval_report(const EvalScores& baseline, const EvalScores& candidate, const MetricGrouping& grouping,
                       double margin) {
  grouping.validate();
  if (!(margin >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "margin must be non-negative");
  std::string missing;
  std::set<std::string> listed;
  for (const auto& g : grouping.groups) {
    for (const auto& m : g.metrics) {
      if (!listed.insert(m).second) continue;
      for (const EvalScores* s : {&baseline, &candidate}) {
        auto it = s->scores.find(m);
        if (it == s->scores.end()) {
          missing += (missing.empty() ? "" : ", ") + m + " (" + s->run_label + ")";
        } else if (!(it->second >= 0.0 && it->second <= 100.0)) {
          throw Error(ErrorCode::kInvalidArgument, "score for " + m + " in " + s->run_label + " is outside [0, 100]");
        }
      }
    }
  }
  if (!missing.empty()) throw Error(ErrorCode::kMissingMetric, "missing metrics: " + missing);

  EvalReport r;
  r.baseline_label = baseline.run_label;
  r.candidate_label = candidate.run_label;
  r.margin = margin;
  std::set<std::string> emitted;
  for (const auto& g : grouping.groups) {
    GroupResult gr{g.name, g.metrics, 0.0, 0.0, 0.0, Verdict::kNeutral};
    double b = 0.0, c = 0.0;
    for (const auto& m : g.metrics) {
      const double bm = baseline.scores.at(m), cm = candidate.scores.at(m);
      b += bm;
      c += cm;
      if (emitted.insert(m).second) r.metrics.push_back({m, bm, cm, cm - bm});
    }
    const auto n = static_cast<double>(g.metrics.size());
    gr.baseline_average = b / n;
    gr.candidate_average = c / n;
    gr.diff = gr.candidate_average - gr.baseline_average;
    if (gr.diff > margin) gr.verdict = Verdict::kImproved;
    if (gr.diff < -margin) gr.verdict = Verdict::kRegressed;
    r.groups.push_back(std::move(gr));
  }
  return r;
}

json eval_report_to_json(const EvalReport& r) {
  json metrics = json::array();
  for (const auto& m : r.metrics) {
    metrics.push_back({{"metric", m.metric}, {"baseline", m.baseline}, {"candidate", m.candidate}, {"diff", m.diff}});
  }
  json groups = json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"name", g.name},
                      {"metrics", g.metrics},
                      {"baseline_average", g.baseline_average},
                      {"candidate_average", g.candidate_average},
                      {"diff", g.diff},
                      {"verdict", verdict_name(g.verdict)}});
  }
  return {{"baseline", r.baseline_label}, {"candidate", r.candidate_label}, {"margin", r.margin},
          {"metrics", metrics},           {"groups", groups},               {"improved", r.improved()}};
}

// Rebuilt from the per-metric scores; stored averages and verdicts are not
// trusted.
EvalReport eval_report_from_json(const json& j) {
  try {
    EvalScores b{j.at("baseline").get<std::string>(), {}};
    EvalScores c{j.at("candidate").get<std::string>(), {}};
    for (const auto& m : j.at("metrics")) {
      const auto name = m.at("metric").get<std::string>();
      b.scores[name] = m.at("baseline").get<double>();
      c.scores[name] = m.at("candidate").get<double>();
    }
    MetricGrouping g;
    for (const auto& grp : j.at("groups")) {
      g.groups.push_back({grp.at("name").get<std::string>(), grp.at("metrics").get<std::vector<std::string>>()});
    }
    return eval_report(b, c, g, j.at("margin").get<double>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad eval report: ") + e.what());
  }
}

namespace {

std::string fixed(double v, bool sign) {
  char buf[64];
  std::snprintf(buf, sizeof buf, sign ? "%+.3f" : "%.3f", v);
  return buf;
}

std::string pad(std::string s, size_t width, bool left) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

std::string render_table(const EvalReport& r) {
  size_t w0 = 6;
  for (const auto& m : r.metrics) w0 = std::max(w0, m.metric.size());
  for (const auto& g : r.groups) w0 = std::max(w0, g.name.size() + 10);
  const size_t w1 = std::max<size_t>(9, r.baseline_label.size());
  const size_t w2 = std::max<size_t>(9, r.candidate_label.size());
  std::string out;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                 const std::string& e) {
    std::string line = pad(a, w0, true) + "  " + pad(b, w1, false) + "  " + pad(c, w2, false) + "  " + pad(d, 8, false);
    if (!e.empty()) line += "  " + e;
    out += line + "\n";
  };
  row("Metric", r.baseline_label, r.candidate_label, "diff", "");
  for (const auto& m : r.metrics) row(m.metric, fixed(m.baseline, false), fixed(m.candidate, false), fixed(m.diff, true), "");
  for (const auto& g : r.groups) {
    row("Average " + g.name, fixed(g.baseline_average, false), fixed(g.candidate_average, false), fixed(g.diff, true),
        std::string(verdict_name(g.verdict)));
  }
  out += std::string("verdict: ") + (r.improved() ? "improved" : "not improved") + " (margin " + fixed(r.margin, false) +
         " pp)\n";
  return out;
}

std::string render_markdown(const EvalReport& r) {
  std::string out = "| Metric | " + r.baseline_label + " | " + r.candidate_label + " | diff | verdict |\n";
  out += "|---|---:|---:|---:|---|\n";
  for (const auto& m : r.metrics) {
    out += "| " + m.metric + " | " + fixed(m.baseline, false) + " | " + fixed(m.candidate, false) + " | " +
           fixed(m.diff, true) + " | |\n";
  }
  for (const auto& g : r.groups) {
    out += "| *Average " + g.name + "* | " + fixed(g.baseline_average, false) + " | " +
           fixed(g.candidate_average, false) + " | " + fixed(g.diff, true) + " | " +
           std::string(verdict_name(g.verdict)) + " |\n";
  }
  return out;
}

}  // namespace ufw
