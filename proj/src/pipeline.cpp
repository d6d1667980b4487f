#include "ufw/pipeline.hpp"


#include <algorithm>
#include <map>

#include <spdlog/spdlog.h>

#include "ufw/error.hpp"
#include "ufw/filter.hpp"
#include "ufw/hash.hpp"
#include "ufw/rng.hpp"
#include "ufw/seedpool.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ufw {

// ------------------------------------------------------------------ config

void PipelineConfig::validate() const {
  if (max_rounds < 1) throw Error(ErrorCode::kInvalidArgument, "max_rounds must be >= 1");
  if (sample_size == 0) throw Error(ErrorCode::kInvalidArgument, "sample_size must be > 0");
  if (target_training_set == 0) throw Error(ErrorCode::kInvalidArgument, "target_training_set must be > 0");
  if (!(balance >= 0.0 && balance <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "balance must be in [0, 1]");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "threshold must be in [0, 1]");
  if (seed_pool.empty()) throw Error(ErrorCode::kInvalidArgument, "seed_pool directory is required");
  if (raw_shards.empty()) throw Error(ErrorCode::kInvalidArgument, "raw_shards must list at least one shard");
  if (default_manifest.empty()) throw Error(ErrorCode::kInvalidArgument, "default_manifest is empty");
  classifier.validate();
  normalize.validate();
  verify.validate();
}

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return fs::absolute(base / p).lexically_normal();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.sample_size = j.value("sample_size", c.sample_size);
    c.target_training_set = j.value("target_training_set", c.target_training_set);
    c.balance = j.value("balance", c.balance);
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("classifier")) c.classifier = classifier_config_from_json(j["classifier"]);
    if (j.contains("tokenizer")) c.tokenizer = tokenizer_spec_from_json(j["tokenizer"]);
    if (j.contains("normalize")) c.normalize = policy_from_json(j["normalize"]);
    if (j.contains("verify")) c.verify = anneal_plan_from_json(j["verify"]);
    c.seed = j.value("seed", c.seed);
    c.seed_pool = resolve(j.value("seed_pool", std::string()), base_dir);
    if (j.contains("pool_version") && !j["pool_version"].is_null()) c.pool_version = j["pool_version"].get<uint64_t>();
    for (const auto& s : j.value("raw_shards", json::array())) c.raw_shards.push_back(resolve(s.get<std::string>(), base_dir));
    if (j.contains("default_manifest")) {
      const json& m = j["default_manifest"];
      c.default_manifest = m.is_string() ? token_manifest_from_json(json::parse(read_file(resolve(m.get<std::string>(), base_dir))))
                                         : token_manifest_from_json(m);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad pipeline config: ") + e.what());
  }
  if (c.tokenizer.vocab_path) c.tokenizer.vocab_path = resolve(*c.tokenizer.vocab_path, base_dir).string();
  c.validate();
  return c;
}

json pipeline_config_to_json(const PipelineConfig& c) {
  json shards = json::array();
  for (const auto& s : c.raw_shards) shards.push_back(s.string());
  return {{"max_rounds", c.max_rounds},
          {"sample_size", c.sample_size},
          {"target_training_set", c.target_training_set},
          {"balance", c.balance},
          {"threshold", c.threshold},
          {"classifier", classifier_config_to_json(c.classifier)},
          {"tokenizer", tokenizer_spec_to_json(c.tokenizer)},
          {"normalize", policy_to_json(c.normalize)},
          {"verify", anneal_plan_to_json(c.verify)},
          {"seed", c.seed},
          {"seed_pool", c.seed_pool.string()},
          {"pool_version", c.pool_version ? json(*c.pool_version) : json(nullptr)},
          {"raw_shards", shards},
          {"default_manifest", token_manifest_to_json(c.default_manifest)}};
}

// ------------------------------------------------------------------- state

namespace {

constexpr std::pair<RunStatus, std::string_view> kStatusNames[] = {
    {RunStatus::kAwaitingTrainingSet, "awaiting_training_set"},
    {RunStatus::kAwaitingClassifier, "awaiting_classifier"},
    {RunStatus::kAwaitingVerification, "awaiting_verification"},
    {RunStatus::kVerdictReady, "verdict_ready"},
    {RunStatus::kPromoted, "promoted"},
    {RunStatus::kRejected, "rejected"},
};

json artifact_json(const std::optional<ArtifactRef>& a) {
  if (!a) return nullptr;
  return {{"path", a->path}, {"fingerprint", to_hex(a->fingerprint)}};
}

std::optional<ArtifactRef> artifact_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return ArtifactRef{j.at("path").get<std::string>(), from_hex(j.at("fingerprint").get<std::string>())};
}

}  // namespace

std::string_view run_status_name(RunStatus s) {
  for (const auto& [k, v] : kStatusNames) {
    if (k == s) return v;
  }
  return "unknown";
}

RunStatus run_status_from_name(std::string_view name) {
  for (const auto& [k, v] : kStatusNames) {
    if (v == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown run status '" + std::string(name) + "'");
}

json run_state_to_json(const RunState& s) {
  json rounds = json::array();
  for (const auto& r : s.rounds) {
    rounds.push_back({{"round", r.round},
                      {"pool_version", r.pool_version},
                      {"training_set", artifact_json(r.training_set)},
                      {"model", artifact_json(r.model)},
                      {"sample_scores", artifact_json(r.sample_scores)},
                      {"anneal_plan", artifact_json(r.anneal_plan)},
                      {"eval_report", artifact_json(r.eval_report)},
                      {"sample_documents", r.sample_documents},
                      {"sample_kept", r.sample_kept},
                      {"improved", r.improved ? json(*r.improved) : json(nullptr)}});
  }
  return {{"run_id", s.run_id},
          {"round", s.round},
          {"pool_version", s.pool_version},
          {"status", run_status_name(s.status)},
          {"config", artifact_json(s.config)},
          {"rounds", rounds},
          {"promoted_model", s.promoted_model ? json(to_hex(*s.promoted_model)) : json(nullptr)}};
}

RunState run_state_from_json(const json& j) {
  RunState s;
  s.run_id = j.at("run_id").get<std::string>();
  s.round = j.at("round").get<int>();
  s.pool_version = j.at("pool_version").get<uint64_t>();
  s.status = run_status_from_name(j.at("status").get<std::string>());
  s.config = artifact_from(j.at("config")).value();
  for (const auto& rj : j.at("rounds")) {
    RoundRecord r;
    r.round = rj.at("round").get<int>();
    r.pool_version = rj.at("pool_version").get<uint64_t>();
    r.training_set = artifact_from(rj.at("training_set"));
    r.model = artifact_from(rj.at("model"));
    r.sample_scores = artifact_from(rj.at("sample_scores"));
    r.anneal_plan = artifact_from(rj.at("anneal_plan"));
    r.eval_report = artifact_from(rj.at("eval_report"));
    r.sample_documents = rj.at("sample_documents").get<uint64_t>();
    r.sample_kept = rj.at("sample_kept").get<uint64_t>();
    if (!rj.at("improved").is_null()) r.improved = rj["improved"].get<bool>();
    s.rounds.push_back(std::move(r));
  }
  if (!j.at("promoted_model").is_null()) s.promoted_model = from_hex(j["promoted_model"].get<std::string>());
  return s;
}

// ----------------------------------------------------------------- journal

namespace {

constexpr std::string_view kJournal = "journal.jsonl";

std::string journal_line(uint64_t seq, const std::string& event, const RunState& state) {
  json body = {{"seq", seq}, {"event", event}, {"state", run_state_to_json(state)}};
  const std::string payload = body.dump();
  body["checksum"] = to_hex(fnv1a64(payload));
  return body.dump() + "\n";
}

struct JournalScan {
  std::vector<JournalEntry> entries;
  uint64_t valid_bytes = 0;  // prefix holding complete, valid lines
};

JournalScan scan_journal(const fs::path& run_dir) {
  const fs::path path = run_dir / kJournal;
  if (!fs::exists(path)) throw Error(ErrorCode::kJournalUnreadable, "no journal in " + run_dir.string());
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kJournalUnreadable, e.detail());
  }
  JournalScan scan;
  size_t pos = 0;
  uint64_t line_no = 0;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    ++line_no;
    // A final line without its newline is a write cut short.
    if (nl == std::string::npos) break;
    const std::string_view line(text.data() + pos, nl - pos);
    const bool last = nl + 1 == text.size();
    try {
      json j = json::parse(line);
      const std::string checksum = j.at("checksum").get<std::string>();
      j.erase("checksum");
      if (to_hex(fnv1a64(j.dump())) != checksum) throw Error(ErrorCode::kJournalUnreadable, "checksum mismatch");
      JournalEntry e;
      e.seq = j.at("seq").get<uint64_t>();
      e.event = j.at("event").get<std::string>();
      e.state = run_state_from_json(j.at("state"));
      if (e.seq != scan.entries.size()) throw Error(ErrorCode::kJournalUnreadable, "sequence gap");
      scan.entries.push_back(std::move(e));
      scan.valid_bytes = nl + 1;
    } catch (const std::exception& ex) {
      if (last) break;
      throw Error(ErrorCode::kJournalUnreadable,
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    pos = nl + 1;
  }
  if (scan.entries.empty()) throw Error(ErrorCode::kJournalUnreadable, path.string() + " holds no complete entry");
  return scan;
}

void check_artifact(const fs::path& run_dir, const ArtifactRef& a) {
  const fs::path path = run_dir / a.path;
  if (!fs::exists(path)) throw Error(ErrorCode::kStateCorrupt, "artifact " + a.path + " is missing");
  if (fnv1a64(read_file(path)) != a.fingerprint) {
    throw Error(ErrorCode::kStateCorrupt, "artifact " + a.path + " does not match its fingerprint");
  }
}

void check_state(const fs::path& run_dir, const RunState& s, const PipelineConfig& config) {
  for (const auto& r : s.rounds) {
    for (const auto* a : {&r.training_set, &r.model, &r.sample_scores, &r.anneal_plan, &r.eval_report}) {
      if (*a) check_artifact(run_dir, **a);
    }
  }
  for (const auto& r : s.rounds) {
    if (!fs::exists(config.seed_pool / "manifests" / (std::to_string(r.pool_version) + ".json"))) {
      throw Error(ErrorCode::kStateCorrupt, "seed pool version " + std::to_string(r.pool_version) + " is missing from " +
                                                config.seed_pool.string());
    }
  }
}

PipelineConfig load_run_config(const fs::path& run_dir, const RunState& s) {
  check_artifact(run_dir, s.config);
  try {
    return pipeline_config_from_json(json::parse(read_file(run_dir / s.config.path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kStateCorrupt, std::string("config.json: ") + e.what());
  }
}

}  // namespace

std::vector<JournalEntry> read_journal(const fs::path& run_dir) { return scan_journal(run_dir).entries; }

RunState resume(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw Error(ErrorCode::kJournalUnreadable, run_dir.string() + " is not a directory");
  RunState s = scan_journal(run_dir).entries.back().state;
  check_state(run_dir, s, load_run_config(run_dir, s));
  return s;
}

// --------------------------------------------------------------------- run

PipelineRun::PipelineRun(fs::path dir, FaultHook fault) : dir_(std::move(dir)), fault_(std::move(fault)) {}

PipelineRun PipelineRun::init(const fs::path& run_dir, const PipelineConfig& config, FaultHook fault) {
  config.validate();
  fs::create_directories(run_dir);
  PipelineRun run(run_dir, std::move(fault));
  run.lock_ = std::make_unique<FileLock>(run_dir / ".lock");
  if (fs::exists(run_dir / kJournal)) {
    bool has_entry = true;
    try {
      scan_journal(run_dir);
    } catch (const Error&) {
      has_entry = false;  // an init that never completed
    }
    if (has_entry) throw Error(ErrorCode::kInvalidArgument, run_dir.string() + " already holds a run");
    fs::remove(run_dir / kJournal);
  }

  SeedPoolStore store(config.seed_pool);
  uint64_t version = 0;
  if (config.pool_version) {
    store.load(*config.pool_version);
    version = *config.pool_version;
  } else {
    const auto latest = store.latest_version();
    if (!latest) throw Error(ErrorCode::kNoCategories, "seed pool " + config.seed_pool.string() + " is empty");
    version = *latest;
  }

  json cj = pipeline_config_to_json(config);
  cj["pool_version"] = version;
  const std::string config_text = cj.dump(2) + "\n";
  write_file_atomic(run_dir / "config.json", config_text);
  run.config_ = config;
  run.config_.pool_version = version;

  RunState s;
  s.run_id = to_hex(fnv1a64(config_text));
  s.round = 1;
  s.pool_version = version;
  s.status = RunStatus::kAwaitingTrainingSet;
  s.config = {"config.json", fnv1a64(config_text)};
  s.rounds.emplace_back();
  s.rounds.back().pool_version = version;
  run.commit("init", std::move(s));
  return run;
}

PipelineRun PipelineRun::open(const fs::path& run_dir, FaultHook fault) {
  if (!fs::is_directory(run_dir)) throw Error(ErrorCode::kJournalUnreadable, run_dir.string() + " is not a directory");
  PipelineRun run(run_dir, std::move(fault));
  run.lock_ = std::make_unique<FileLock>(run_dir / ".lock");
  const JournalScan scan = scan_journal(run_dir);
  run.state_ = scan.entries.back().state;
  run.config_ = load_run_config(run_dir, run.state_);
  check_state(run_dir, run.state_, run.config_);
  run.next_seq_ = scan.entries.size();
  if (scan.valid_bytes != fs::file_size(run_dir / kJournal)) {
    spdlog::warn("dropping torn journal tail in {}", run_dir.string());
    fs::resize_file(run_dir / kJournal, scan.valid_bytes);
  }
  return run;
}

void PipelineRun::fault(std::string_view point, const std::string& event) const {
  if (fault_) fault_(std::string(point) + ":" + event);
}

void PipelineRun::commit(const std::string& event, RunState next) {
  fault("artifacts", event);
  const std::string line = journal_line(next_seq_, event, next);
  const fs::path path = dir_ / kJournal;
  if (fault_) {
    const size_t half = line.size() / 2;
    append_durable(path, std::string_view(line).substr(0, half));
    fault("torn", event);
    append_durable(path, std::string_view(line).substr(half));
  } else {
    append_durable(path, line);
  }
  ++next_seq_;
  state_ = std::move(next);
  spdlog::info("run {} round {}: {} -> {}", state_.run_id, state_.round, event, run_status_name(state_.status));
  fault("journaled", event);
}

fs::path PipelineRun::round_dir(int round) const { return dir_ / "rounds" / std::to_string(round); }

ArtifactRef PipelineRun::write_artifact(int round, const std::string& name, std::string_view bytes) const {
  fs::create_directories(round_dir(round));
  const std::string rel = "rounds/" + std::to_string(round) + "/" + name;
  write_file_atomic(dir_ / rel, bytes);
  return {rel, fnv1a64(bytes)};
}

namespace {

uint64_t round_seed(uint64_t seed, int round, std::string_view purpose) {
  return splitmix64(seed ^ splitmix64(static_cast<uint64_t>(round)) ^ fnv1a64(purpose));
}

struct SampledDoc {
  size_t shard = 0;
  Document doc;
};

// Reads every raw shard and draws `k` documents without replacement, kept
// in corpus order.
std::vector<SampledDoc> draw_sample(const std::vector<fs::path>& shards, uint64_t k, uint64_t seed) {
  std::vector<SampledDoc> all;
  for (size_t i = 0; i < shards.size(); ++i) {
    const std::string text = read_shard_text(shards[i]);
    const std::string name = shards[i].filename().string();
    size_t pos = 0;
    uint64_t line_no = 0;
    while (pos < text.size()) {
      size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      ++line_no;
      const std::string_view line(text.data() + pos, nl - pos);
      pos = nl + 1;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        all.push_back({i, parse_document(line, name, line_no)});
      } catch (const Error& e) {
        spdlog::warn("sample: skipping {}", e.detail());
      }
    }
  }
  if (all.empty()) throw Error(ErrorCode::kEmptyDataset, "raw shards hold no documents");
  k = std::min<uint64_t>(k, all.size());
  std::vector<size_t> idx(all.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<size_t>(rng.below(idx.size() - i))]);
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  std::vector<SampledDoc> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(std::move(all[i]));
  return out;
}

Error with_round(const Error& e, int round, std::string_view step) {
  return Error(e.code(), "round " + std::to_string(round) + ", " + std::string(step) + ": " + e.detail());
}

}  // namespace

void PipelineRun::assemble_step(RunState& next) {
  SeedPoolStore store(config_.seed_pool);
  const SeedPoolManifest pool = store.load(state_.pool_version);
  const auto examples = assemble_training_set(pool, config_.target_training_set, config_.balance,
                                              round_seed(config_.seed, state_.round, "assemble"));
  std::string body;
  for (const auto& ex : examples) {
    body += json{{"text", normalize_text(ex.text, config_.normalize)},
                 {"label", config_.classifier.labels.at(static_cast<size_t>(ex.label))}}
                .dump();
    body += '\n';
  }
  next.rounds.back().training_set = write_artifact(state_.round, "training_set", body);
  next.status = RunStatus::kAwaitingClassifier;
}

void PipelineRun::classifier_step(RunState& next) {
  const int round = state_.round;
  RoundRecord& rec = next.rounds.back();
  const Tokenizer tokenizer = Tokenizer::load(config_.tokenizer);

  const auto examples = read_training_file(dir_ / rec.training_set->path, config_.classifier);
  const ClassifierModel model = train(examples, config_.classifier, tokenizer);
  const std::string model_bytes = model.serialize();
  rec.model = write_artifact(round, "model.ufwc", model_bytes);

  // Score the sample shard by shard so the plan can name source shards.
  const auto sample = draw_sample(config_.raw_shards, config_.sample_size, round_seed(config_.seed, round, "sample"));
  std::map<size_t, std::string> per_shard;
  for (const auto& s : sample) {
    per_shard[s.shard] += document_to_json(s.doc).dump();
    per_shard[s.shard] += '\n';
  }
  ScoreOptions options;
  options.threshold = config_.threshold;
  options.policy = config_.normalize;
  std::string scores;
  std::vector<ManifestShard> candidate;
  for (const auto& [shard, content] : per_shard) {
    const std::string name = config_.raw_shards[shard].filename().string();
    const ShardScores result = score_shard(model, tokenizer, {name, content}, options);
    for (const auto& d : result.scored) {
      scores += json{{"id", d.id}, {"score", d.score}, {"kept", d.kept}}.dump();
      scores += '\n';
      ++rec.sample_documents;
      if (d.kept) ++rec.sample_kept;
    }
    if (result.stats.tokens_kept > 0) candidate.push_back({name, result.stats.tokens_kept});
  }
  rec.sample_scores = write_artifact(round, "sample_scores", scores);

  if (candidate.empty()) {
    throw Error(ErrorCode::kNonPositiveTokens, "the classifier kept none of the " +
                                                   std::to_string(rec.sample_documents) + " sampled documents");
  }
  const Mixture mixture = compose_mixture(candidate, config_.default_manifest, config_.verify);
  json plan = anneal_plan_document(config_.verify, candidate, config_.default_manifest, mixture);
  plan["classifier_fingerprint"] = to_hex(rec.model->fingerprint);
  plan["run_id"] = state_.run_id;
  plan["round"] = round;
  rec.anneal_plan = write_artifact(round, "anneal_plan.json", plan.dump(2) + "\n");
  next.status = RunStatus::kAwaitingVerification;
}

void PipelineRun::verdict_step(RunState& next, std::string& event) {
  const RoundRecord& rec = next.rounds.back();
  if (!*rec.improved) {
    next.status = RunStatus::kRejected;
    event = "rejected";
    return;
  }
  if (state_.round >= config_.max_rounds) {
    next.status = RunStatus::kPromoted;
    next.promoted_model = rec.model->fingerprint;
    event = "promoted";
    return;
  }

  // Fold the scored sample into the pool: kept documents become a positive
  // category, rejected ones a negative category.
  std::map<std::string, bool> kept;
  const std::string scores = read_file(dir_ / rec.sample_scores->path);
  for (size_t pos = 0; pos < scores.size();) {
    const size_t nl = scores.find('\n', pos);
    const json j = json::parse(std::string_view(scores).substr(pos, nl - pos));
    kept[j.at("id").get<std::string>()] = j.at("kept").get<bool>();
    pos = nl + 1;
  }
  const auto sample =
      draw_sample(config_.raw_shards, config_.sample_size, round_seed(config_.seed, state_.round, "sample"));
  const std::string tag = "r" + std::to_string(state_.round);
  SeedCategory pos, neg;
  pos.name = "inferred-" + tag + "-kept";
  neg.name = "inferred-" + tag + "-rejected";
  pos.polarity = Polarity::kPositive;
  neg.polarity = Polarity::kNegative;
  pos.source = neg.source = "run " + state_.run_id + " " + tag;
  for (const auto& s : sample) {
    const auto it = kept.find(s.doc.id);
    if (it == kept.end()) continue;
    (it->second ? pos : neg).documents.push_back(s.doc.text);
  }

  SeedPoolStore store(config_.seed_pool);
  SeedPoolManifest child = store.load(state_.pool_version);
  for (auto* c : {&pos, &neg}) {
    if (!c->documents.empty()) child = add_category(child, std::move(*c));
  }
  child.parent_version = state_.pool_version;

  // A crash after an earlier commit leaves that version behind; reuse it.
  std::optional<uint64_t> version;
  const json wanted = manifest_summary(child)["categories"];
  for (uint64_t v : store.versions()) {
    if (v <= state_.pool_version) continue;
    const SeedPoolManifest m = store.load(v);
    if (m.parent_version != state_.pool_version || manifest_summary(m)["categories"] != wanted) continue;
    bool same = true;
    for (size_t i = 0; i < m.categories.size() && same; ++i) same = m.categories[i].documents == child.categories[i].documents;
    if (same) {
      version = v;
      break;
    }
  }
  if (!version) version = store.commit(std::move(child)).version;

  next.round = state_.round + 1;
  next.pool_version = *version;
  next.status = RunStatus::kAwaitingTrainingSet;
  next.rounds.emplace_back();
  next.rounds.back().round = next.round;
  next.rounds.back().pool_version = *version;
  event = "next_round";
}

const RunState& PipelineRun::step() {
  RunState next = state_;
  std::string event;
  const char* step_name = "";
  try {
    switch (state_.status) {
      case RunStatus::kAwaitingTrainingSet:
        step_name = "assemble training set";
        assemble_step(next);
        event = "training_set_assembled";
        break;
      case RunStatus::kAwaitingClassifier:
        step_name = "train and score";
        classifier_step(next);
        event = "classifier_trained";
        break;
      case RunStatus::kVerdictReady:
        step_name = "apply verdict";
        verdict_step(next, event);
        break;
      case RunStatus::kAwaitingVerification:
        throw Error(ErrorCode::kInvalidTransition, "run is awaiting a verification report");
      case RunStatus::kPromoted:
      case RunStatus::kRejected:
        throw Error(ErrorCode::kInvalidTransition,
                    "run is finished (" + std::string(run_status_name(state_.status)) + ")");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidTransition) throw;
    throw with_round(e, state_.round, step_name);
  }
  commit(event, std::move(next));
  return state_;
}

const RunState& PipelineRun::advance() {
  while (!state_.terminal() && state_.status != RunStatus::kAwaitingVerification) step();
  return state_;
}

const RunState& PipelineRun::ingest_report(const EvalReport& report) {
  if (state_.status != RunStatus::kAwaitingVerification) {
    throw Error(ErrorCode::kInvalidTransition,
                "cannot ingest a report in status " + std::string(run_status_name(state_.status)));
  }
  RunState next = state_;
  RoundRecord& rec = next.rounds.back();
  rec.eval_report = write_artifact(state_.round, "eval_report.json", eval_report_to_json(report).dump(2) + "\n");
  rec.improved = report.improved();
  next.status = RunStatus::kVerdictReady;
  commit("report_ingested", std::move(next));
  return state_;
}

}  // namespace ufw
