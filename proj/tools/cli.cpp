#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <thread>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "ufw/classifier.hpp"
#include "ufw/error.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/filter.hpp"
#include "ufw/normalize.hpp"
#include "ufw/pipeline.hpp"
#include "ufw/seedpool.hpp"
#include "ufw/tokenize.hpp"
#include "ufw/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ufw::cli {

namespace {

// Settings shared by every subcommand: the parsed config file and the
// global flags that override it.
struct Context {
  std::ostream& out;
  std::ostream& err;
  json config = json::object();
  fs::path config_dir;
  int workers = 1;
  std::optional<uint64_t> seed;

  json section(const char* name) const {
    return config.contains(name) ? config[name] : json::object();
  }

  NormalizePolicy policy() const { return policy_from_json(section("normalize")); }

  TokenizerSpec tokenizer_spec() const {
    TokenizerSpec spec = tokenizer_spec_from_json(section("tokenizer"));
    if (spec.vocab_path && fs::path(*spec.vocab_path).is_relative() && !config_dir.empty()) {
      spec.vocab_path = (config_dir / *spec.vocab_path).string();
    }
    return spec;
  }

  Tokenizer tokenizer() const { return Tokenizer::load(tokenizer_spec()); }

  ClassifierConfig classifier() const {
    ClassifierConfig c = classifier_config_from_json(section("classifier"));
    if (seed) c.seed = *seed;
    return c;
  }

  AnnealPlan anneal_plan() const {
    AnnealPlan p = anneal_plan_from_json(section("verify"));
    if (seed) p.seed = *seed;
    return p;
  }
};

std::string read_input(const std::string& path) {
  if (path.empty() || path == "-") {
    return std::string(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  }
  return read_file(path);
}

void write_output(const Context& ctx, const std::string& path, std::string_view data) {
  if (path.empty() || path == "-") {
    ctx.out << data;
  } else {
    write_file_atomic(path, data);
  }
}

template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  size_t pos = 0;
  uint64_t line_no = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    fn(text.substr(pos, nl - pos), line_no);
    pos = nl + 1;
  }
}

bool blank(std::string_view line) { return line.find_first_not_of(" \t\r") == std::string_view::npos; }

// ---------------------------------------------------------------- commands

struct NormalizeCmd {
  std::string in, out;
  bool jsonl = false;

  int run(const Context& ctx) const {
    const NormalizePolicy policy = ctx.policy();
    const std::string text = read_input(in);
    if (!jsonl) {
      write_output(ctx, out, normalize_text(text, policy));
      return kExitOk;
    }
    std::string result;
    uint64_t malformed = 0;
    for_each_line(text, [&](std::string_view line, uint64_t line_no) {
      if (blank(line)) return;
      try {
        Document doc = parse_document(line, in.empty() ? "stdin" : fs::path(in).filename().string(), line_no);
        doc.text = normalize_text(doc.text, policy);
        result += document_to_json(doc).dump();
        result += '\n';
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kMalformedRecord && e.code() != ErrorCode::kInvalidUtf8) throw;
        spdlog::warn("line {}: {}", line_no, e.what());
        ++malformed;
      }
    });
    write_output(ctx, out, result);
    return malformed ? kExitPartial : kExitOk;
  }
};

struct TokenizeCmd {
  std::string in, out;
  bool jsonl = false;
  bool count = false;
  bool normalize = false;

  int run(const Context& ctx) const {
    const Tokenizer tokenizer = ctx.tokenizer();
    const NormalizePolicy policy = ctx.policy();
    auto encode = [&](const std::string& raw) -> json {
      const std::string text = normalize ? normalize_text(raw, policy) : raw;
      if (count) return tokenizer.token_count(text);
      return tokenizer.tokenize_owned(text);
    };
    const std::string text = read_input(in);
    if (!jsonl) {
      write_output(ctx, out, encode(text).dump() + "\n");
      return kExitOk;
    }
    std::string result;
    uint64_t malformed = 0;
    for_each_line(text, [&](std::string_view line, uint64_t line_no) {
      if (blank(line)) return;
      try {
        const Document doc = parse_document(line, in.empty() ? "stdin" : fs::path(in).filename().string(), line_no);
        result += json{{"id", doc.id}, {"tokens", encode(doc.text)}}.dump();
        result += '\n';
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kMalformedRecord && e.code() != ErrorCode::kInvalidUtf8) throw;
        spdlog::warn("line {}: {}", line_no, e.what());
        ++malformed;
      }
    });
    write_output(ctx, out, result);
    return malformed ? kExitPartial : kExitOk;
  }
};

struct ClassifierTrainCmd {
  std::string input, output;
  bool no_normalize = false;
  std::optional<int> dim, epochs, word_ngrams, min_count;
  std::optional<double> lr;
  std::optional<uint64_t> bucket;

  int run(const Context& ctx) const {
    ClassifierConfig config = ctx.classifier();
    if (dim) config.dim = *dim;
    if (epochs) config.epochs = *epochs;
    if (word_ngrams) config.word_ngrams = *word_ngrams;
    if (min_count) config.min_count = *min_count;
    if (lr) config.lr = *lr;
    if (bucket) config.bucket = *bucket;
    config.validate();
    auto examples = read_training_file(input, config);
    if (!no_normalize) {
      const NormalizePolicy policy = ctx.policy();
      for (auto& ex : examples) ex.text = normalize_text(ex.text, policy);
    }
    TrainStats stats;
    const ClassifierModel model = train(examples, config, ctx.tokenizer(), &stats);
    const std::string bytes = model.serialize();
    write_file_atomic(output, bytes);
    const json summary = {{"model", output},
                          {"fingerprint", to_hex(fnv1a64(bytes))},
                          {"examples", examples.size()},
                          {"vocabulary", model.vocab().size()},
                          {"epoch_mean_loss", stats.epoch_mean_loss},
                          {"zero_feature_examples", stats.zero_feature_examples},
                          {"config", classifier_config_to_json(config)}};
    ctx.out << summary.dump(2) << "\n";
    return kExitOk;
  }
};

struct ClassifierPredictCmd {
  std::string model_path, in, out;
  bool no_normalize = false;

  int run(const Context& ctx) const {
    const ClassifierModel model = ClassifierModel::load(model_path);
    const Tokenizer tokenizer = ctx.tokenizer();
    const NormalizePolicy policy = ctx.policy();
    const std::string text = read_input(in);
    std::string result;
    uint64_t malformed = 0;
    for_each_line(text, [&](std::string_view line, uint64_t line_no) {
      if (blank(line)) return;
      try {
        const Document doc = parse_document(line, in.empty() ? "stdin" : fs::path(in).filename().string(), line_no);
        const std::string norm = no_normalize ? doc.text : normalize_text(doc.text, policy);
        const Prediction p = model.predict(norm, tokenizer);
        result += json{{"id", doc.id},
                       {"label", model.config().labels.at(static_cast<size_t>(p.label))},
                       {"probability", p.probability},
                       {"score", p.distribution.at(static_cast<size_t>(model.positive_label()))}}
                      .dump();
        result += '\n';
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kMalformedRecord && e.code() != ErrorCode::kInvalidUtf8) throw;
        spdlog::warn("line {}: {}", line_no, e.what());
        ++malformed;
      }
    });
    write_output(ctx, out, result);
    return malformed ? kExitPartial : kExitOk;
  }
};

struct SeedpoolCmd {
  std::string store;
  std::optional<uint64_t> version;
  // add
  std::string name, polarity, source, docs;
  // mark
  int factor = 3;
  // assemble
  uint64_t target = 600'000;
  double balance = 0.5;
  std::string out;

  SeedPoolManifest load(const SeedPoolStore& s) const {
    if (version) return s.load(*version);
    const auto latest = s.latest_version();
    if (!latest) throw Error(ErrorCode::kNoCategories, "seed pool " + store + " is empty");
    return s.load(*latest);
  }

  std::optional<Polarity> polarity_opt() const {
    if (polarity.empty()) return std::nullopt;
    return polarity_from_name(polarity);
  }

  int add(const Context& ctx) const {
    SeedPoolStore s(store);
    SeedCategory cat;
    cat.name = name;
    cat.polarity = polarity_from_name(polarity);
    cat.source = source;
    const std::string text = read_input(docs);
    for_each_line(text, [&](std::string_view line, uint64_t line_no) {
      if (blank(line)) return;
      cat.documents.push_back(parse_document(line, fs::path(docs).filename().string(), line_no).text);
    });
    const bool first = !s.latest_version();
    SeedPoolManifest next = add_category(first ? SeedPoolManifest{} : load(s), std::move(cat));
    if (first) next.parent_version.reset();
    ctx.out << manifest_summary(s.commit(std::move(next))).dump(2) << "\n";
    return kExitOk;
  }

  int mark(const Context& ctx) const {
    SeedPoolStore s(store);
    SeedPoolManifest next = mark_underrepresented(load(s), name, factor, polarity_opt());
    ctx.out << manifest_summary(s.commit(std::move(next))).dump(2) << "\n";
    return kExitOk;
  }

  int assemble(const Context& ctx) const {
    const SeedPoolManifest pool = load(SeedPoolStore(store));
    const ClassifierConfig config = ctx.classifier();
    const uint64_t seed = ctx.seed.value_or(ctx.config.value("seed", uint64_t{0}));
    const auto examples = assemble_training_set(pool, target, balance, seed);
    std::string body;
    for (const auto& ex : examples) {
      body += json{{"text", ex.text}, {"label", config.labels.at(static_cast<size_t>(ex.label))}}.dump();
      body += '\n';
    }
    write_output(ctx, out, body);
    return kExitOk;
  }

  int show(const Context& ctx) const {
    ctx.out << manifest_summary(load(SeedPoolStore(store))).dump(2) << "\n";
    return kExitOk;
  }
};

ScoreOptions score_options(const Context& ctx) {
  const json f = ctx.section("filter");
  ScoreOptions o;
  o.threshold = f.value("threshold", o.threshold);
  o.normalize = f.value("normalize", o.normalize);
  if (f.contains("token_bin_edges")) o.token_bin_edges = f["token_bin_edges"].get<std::vector<uint64_t>>();
  o.policy = ctx.policy();
  o.workers = ctx.workers;
  return o;
}

struct FilterCmd {
  std::vector<std::string> inputs;
  std::string model, out_dir, out;
  std::optional<double> threshold;
  bool no_normalize = false;
  std::string bins;  // comma-separated edges

  int score(const Context& ctx) const {
    ScoreOptions o = score_options(ctx);
    if (threshold) o.threshold = *threshold;
    if (no_normalize) o.normalize = false;
    const std::vector<fs::path> shards(inputs.begin(), inputs.end());
    const ScoreRun run = score_corpus(model, ctx.tokenizer(), shards, out_dir, o);
    json summary = filter_stats_to_json(run.stats);
    summary["partial"] = run.partial;
    summary["corpus_fingerprint"] = to_hex(run.kept.corpus_fingerprint);
    json shard_list = json::array();
    for (const auto& s : run.shards) {
      shard_list.push_back({{"shard", s.shard}, {"ok", s.ok}, {"resumed", s.resumed}, {"error", s.error}});
    }
    summary["shards"] = shard_list;
    ctx.out << summary.dump(2) << "\n";
    return run.partial ? kExitPartial : kExitOk;
  }

  int intersect_cmd(const Context& ctx) const {
    std::vector<KeepManifest> manifests;
    for (const auto& p : inputs) manifests.push_back(read_manifest(p));
    write_output(ctx, out, format_manifest(intersect(manifests)));
    return kExitOk;
  }

  int stats(const Context& ctx) const {
    std::vector<uint64_t> edges;
    std::istringstream list(bins);
    for (std::string item; std::getline(list, item, ',');) {
      try {
        edges.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidArgument, "bad bin edge '" + item + "'");
      }
    }
    if (edges.empty()) edges = score_options(ctx).token_bin_edges;
    const std::vector<fs::path> shards(inputs.begin(), inputs.end());
    const TokenLengthReport r = token_length_histogram(shards, ctx.tokenizer(), edges, ctx.workers);
    write_output(ctx, out, token_length_report_to_json(r).dump(2) + "\n");
    return r.unreadable.empty() ? kExitOk : kExitPartial;
  }
};

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_input(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path + ": " + e.what());
  }
}

struct VerifyCmd {
  // plan
  std::string candidate, defaults, out;
  std::optional<int64_t> candidate_tokens;
  std::optional<uint64_t> batch_size, seq_len;
  std::optional<int> n_epoch;
  std::optional<std::string> rounding;
  std::optional<double> candidate_weight;
  // report
  std::string baseline, grouping, format = "table";
  double margin = 0.1;

  int plan(const Context& ctx) const {
    AnnealPlan p = ctx.anneal_plan();
    if (batch_size) p.global_batch_size = *batch_size;
    if (seq_len) p.sequence_length = *seq_len;
    if (n_epoch) p.n_epoch = *n_epoch;
    if (rounding) p.rounding_mode = rounding_mode_from_name(*rounding);
    if (candidate_weight) {
      p.candidate_weight = *candidate_weight;
      p.default_weight = 1.0 - *candidate_weight;
    }
    p.validate();
    if (candidate_tokens) {
      const StepPlan s = plan_steps(*candidate_tokens, p.n_epoch, p.global_batch_size, p.sequence_length,
                                    p.rounding_mode, p.candidate_weight);
      const json j = {{"candidate_tokens", *candidate_tokens},
                      {"n_epoch", p.n_epoch},
                      {"rounding_mode", rounding_mode_name(p.rounding_mode)},
                      {"total_token", s.total_tokens},
                      {"tokens_per_step", s.tokens_per_step},
                      {"raw_steps", s.raw_steps},
                      {"computed_steps", s.steps}};
      write_output(ctx, out, j.dump(2) + "\n");
      return kExitOk;
    }
    if (candidate.empty() || defaults.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "verify plan needs --candidate and --default, or --candidate-tokens");
    }
    const auto cand = token_manifest_from_json(read_json_file(candidate));
    const auto def = token_manifest_from_json(read_json_file(defaults));
    const Mixture m = compose_mixture(cand, def, p);
    write_output(ctx, out, anneal_plan_document(p, cand, def, m).dump(2) + "\n");
    return kExitOk;
  }

  int report(const Context& ctx) const {
    const MetricGrouping g = grouping.empty() ? MetricGrouping::standard() : grouping_from_json(read_json_file(grouping));
    const EvalReport r = eval_report(eval_scores_from_json(read_json_file(baseline)),
                                     eval_scores_from_json(read_json_file(candidate)), g, margin);
    std::string text;
    if (format == "json") {
      text = eval_report_to_json(r).dump(2) + "\n";
    } else if (format == "markdown") {
      text = render_markdown(r);
    } else {
      text = render_table(r);
    }
    write_output(ctx, out, text);
    return kExitOk;
  }
};

struct PipelineCmd {
  std::string run_dir, settings;
  bool single_step = false;
  std::string report, baseline, candidate, grouping;

  int init(const Context& ctx) const {
    PipelineConfig c;
    if (!settings.empty()) {
      c = pipeline_config_from_json(read_json_file(settings), fs::absolute(settings).parent_path());
    } else if (ctx.config.contains("pipeline")) {
      json j = ctx.config["pipeline"];
      for (const char* k : {"classifier", "tokenizer", "normalize", "verify"}) {
        if (!j.contains(k) && ctx.config.contains(k)) j[k] = ctx.config[k];
      }
      c = pipeline_config_from_json(j, ctx.config_dir);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "pipeline init needs --settings or a \"pipeline\" config section");
    }
    if (ctx.seed) c.seed = *ctx.seed;
    auto run = PipelineRun::init(run_dir, c);
    ctx.out << run_state_to_json(run.state()).dump(2) << "\n";
    return kExitOk;
  }

  int advance(const Context& ctx) const {
    auto run = PipelineRun::open(run_dir);
    if (single_step) {
      run.step();
    } else {
      run.advance();
    }
    ctx.out << run_state_to_json(run.state()).dump(2) << "\n";
    return kExitOk;
  }

  int ingest(const Context& ctx) const {
    EvalReport r;
    if (!report.empty()) {
      r = eval_report_from_json(read_json_file(report));
    } else if (!baseline.empty() && !candidate.empty()) {
      const MetricGrouping g =
          grouping.empty() ? MetricGrouping::standard() : grouping_from_json(read_json_file(grouping));
      r = eval_report(eval_scores_from_json(read_json_file(baseline)), eval_scores_from_json(read_json_file(candidate)), g);
    } else {
      throw Error(ErrorCode::kInvalidArgument, "ingest-report needs --report, or --baseline and --candidate");
    }
    auto run = PipelineRun::open(run_dir);
    run.ingest_report(r);
    ctx.out << run_state_to_json(run.state()).dump(2) << "\n";
    return kExitOk;
  }

  int status(const Context& ctx) const {
    const RunState s = resume(run_dir);
    json j = run_state_to_json(s);
    j["journal_entries"] = read_journal(run_dir).size();
    ctx.out << j.dump(2) << "\n";
    return kExitOk;
  }

  int resume_cmd(const Context& ctx) const {
    auto run = PipelineRun::open(run_dir);
    ctx.out << run_state_to_json(run.state()).dump(2) << "\n";
    return kExitOk;
  }
};

spdlog::level::level_enum parse_level(const std::string& name) {
  const auto level = spdlog::level::from_str(name);
  if (level == spdlog::level::off && name != "off") {
    throw Error(ErrorCode::kInvalidArgument, "unknown log level '" + name + "'");
  }
  return level;
}

// Restores the previous default logger on scope exit.
class LoggerScope {
 public:
  explicit LoggerScope(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto logger = std::make_shared<spdlog::logger>("ufw", std::move(sink));
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(std::move(logger));
  }
  ~LoggerScope() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LoggerScope logger_scope(err);

  CLI::App app{"Corpus quality filtering toolkit", "ufw"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, log_level;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file; flags override it");
  auto* log_opt = app.add_option("--log-level", log_level, "trace|debug|info|warn|error|critical|off (env UFW_LOG)");
  auto* workers_opt =
      app.add_option("--workers", workers, "Worker threads for filter score/stats")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed override");

  NormalizeCmd normalize_cmd;
  auto* normalize = app.add_subcommand("normalize", "Normalize text (or the text field of JSONL records)");
  normalize->add_option("--in", normalize_cmd.in, "Input file (default stdin)");
  normalize->add_option("--out", normalize_cmd.out, "Output file (default stdout)");
  normalize->add_flag("--jsonl", normalize_cmd.jsonl, "Input is JSONL documents");

  TokenizeCmd tokenize_cmd;
  auto* tokenize = app.add_subcommand("tokenize", "Tokenize text into a JSON array, or per JSONL record");
  tokenize->add_option("--in", tokenize_cmd.in, "Input file (default stdin)");
  tokenize->add_option("--out", tokenize_cmd.out, "Output file (default stdout)");
  tokenize->add_flag("--jsonl", tokenize_cmd.jsonl, "Input is JSONL documents");
  tokenize->add_flag("--count", tokenize_cmd.count, "Emit token counts instead of tokens");
  tokenize->add_flag("--normalize", tokenize_cmd.normalize, "Normalize before tokenizing");

  auto* classifier = app.add_subcommand("classifier", "Train or apply the quality classifier");
  classifier->require_subcommand(1);
  ClassifierTrainCmd train_cmd;
  auto* train_sub = classifier->add_subcommand("train", "Train a model from __label__ lines or JSONL {text,label}");
  train_sub->add_option("--input", train_cmd.input, "Training file")->required();
  train_sub->add_option("--output", train_cmd.output, "Model file to write")->required();
  train_sub->add_flag("--no-normalize", train_cmd.no_normalize, "Train on the text as given");
  train_sub->add_option("--dim", train_cmd.dim);
  train_sub->add_option("--epochs", train_cmd.epochs);
  train_sub->add_option("--lr", train_cmd.lr);
  train_sub->add_option("--word-ngrams", train_cmd.word_ngrams);
  train_sub->add_option("--min-count", train_cmd.min_count);
  train_sub->add_option("--bucket", train_cmd.bucket);
  ClassifierPredictCmd predict_cmd;
  auto* predict_sub = classifier->add_subcommand("predict", "Score JSONL documents");
  predict_sub->add_option("--model", predict_cmd.model_path, "Model file")->required();
  predict_sub->add_option("--in", predict_cmd.in, "JSONL documents (default stdin)");
  predict_sub->add_option("--out", predict_cmd.out, "Output JSONL (default stdout)");
  predict_sub->add_flag("--no-normalize", predict_cmd.no_normalize);

  SeedpoolCmd pool_cmd;
  auto* seedpool = app.add_subcommand("seedpool", "Manage the versioned seed pool");
  seedpool->require_subcommand(1);
  seedpool->add_option("--store", pool_cmd.store, "Seed pool directory")->required();
  seedpool->add_option("--version", pool_cmd.version, "Pool version (default latest)");
  auto* pool_add = seedpool->add_subcommand("add", "Add a category from JSONL documents");
  pool_add->add_option("--name", pool_cmd.name)->required();
  pool_add->add_option("--polarity", pool_cmd.polarity, "positive|negative")->required();
  pool_add->add_option("--source", pool_cmd.source, "Provenance tag");
  pool_add->add_option("--docs", pool_cmd.docs, "JSONL documents")->required();
  auto* pool_mark = seedpool->add_subcommand("mark", "Mark a category underrepresented");
  pool_mark->add_option("--name", pool_cmd.name)->required();
  pool_mark->add_option("--factor", pool_cmd.factor, "Resampling factor 3..5")->required();
  pool_mark->add_option("--polarity", pool_cmd.polarity);
  auto* pool_assemble = seedpool->add_subcommand("assemble", "Write a balanced training set");
  pool_assemble->add_option("--target", pool_cmd.target, "Training set size");
  pool_assemble->add_option("--balance", pool_cmd.balance, "Positive fraction");
  pool_assemble->add_option("--out", pool_cmd.out, "Output JSONL (default stdout)");
  auto* pool_show = seedpool->add_subcommand("show", "Print a pool version");

  FilterCmd filter_cmd;
  auto* filter = app.add_subcommand("filter", "Score corpora, intersect keep-manifests, token statistics");
  filter->require_subcommand(1);
  auto* filter_score = filter->add_subcommand("score", "Score shards and split kept/rejected");
  filter_score->add_option("--model", filter_cmd.model)->required();
  filter_score->add_option("--out-dir", filter_cmd.out_dir)->required();
  filter_score->add_option("--threshold", filter_cmd.threshold);
  filter_score->add_flag("--no-normalize", filter_cmd.no_normalize);
  filter_score->add_option("shards", filter_cmd.inputs, "JSONL shards (.gz allowed)")->required();
  auto* filter_intersect = filter->add_subcommand("intersect", "Intersect keep-manifests");
  filter_intersect->add_option("--out", filter_cmd.out);
  filter_intersect->add_option("manifests", filter_cmd.inputs)->required();
  auto* filter_stats = filter->add_subcommand("stats", "Token-length histogram over shards");
  filter_stats->add_option("--out", filter_cmd.out);
  filter_stats->add_option("--bins", filter_cmd.bins, "Comma-separated bin edges");
  filter_stats->add_option("shards", filter_cmd.inputs)->required();

  VerifyCmd verify_cmd;
  auto* verify = app.add_subcommand("verify", "Plan annealing runs and compare evaluations");
  verify->require_subcommand(1);
  auto* verify_plan = verify->add_subcommand("plan", "Step arithmetic and mixture schedule");
  verify_plan->add_option("--candidate", verify_cmd.candidate, "Candidate token manifest JSON");
  verify_plan->add_option("--default", verify_cmd.defaults, "Default token manifest JSON");
  verify_plan->add_option("--candidate-tokens", verify_cmd.candidate_tokens, "Only compute steps for this many tokens");
  verify_plan->add_option("--batch-size", verify_cmd.batch_size);
  verify_plan->add_option("--seq-len", verify_cmd.seq_len);
  verify_plan->add_option("--n-epoch", verify_cmd.n_epoch);
  verify_plan->add_option("--rounding", verify_cmd.rounding, "as_written_max|nearest_canonical");
  verify_plan->add_option("--candidate-weight", verify_cmd.candidate_weight);
  verify_plan->add_option("--out", verify_cmd.out);
  auto* verify_report = verify->add_subcommand("report", "Per-group averages and verdicts");
  verify_report->add_option("--baseline", verify_cmd.baseline)->required();
  verify_report->add_option("--candidate", verify_cmd.candidate)->required();
  verify_report->add_option("--grouping", verify_cmd.grouping);
  verify_report->add_option("--format", verify_cmd.format)->check(CLI::IsMember({"table", "json", "markdown"}));
  verify_report->add_option("--margin", verify_cmd.margin);
  verify_report->add_option("--out", verify_cmd.out);

  PipelineCmd pipe_cmd;
  auto* pipeline = app.add_subcommand("pipeline", "Multi-round classifier workflow");
  pipeline->require_subcommand(1);
  pipeline->add_option("--run", pipe_cmd.run_dir, "Run directory")->required();
  auto* pipe_init = pipeline->add_subcommand("init", "Start a run");
  pipe_init->add_option("--settings", pipe_cmd.settings, "Pipeline config JSON (default: \"pipeline\" config section)");
  auto* pipe_advance = pipeline->add_subcommand("advance", "Advance until a report is needed or the run ends");
  pipe_advance->add_flag("--step", pipe_cmd.single_step, "Make one transition only");
  auto* pipe_ingest = pipeline->add_subcommand("ingest-report", "Ingest a verification report");
  pipe_ingest->add_option("--report", pipe_cmd.report, "Report JSON from verify report --format json");
  pipe_ingest->add_option("--baseline", pipe_cmd.baseline);
  pipe_ingest->add_option("--candidate", pipe_cmd.candidate);
  pipe_ingest->add_option("--grouping", pipe_cmd.grouping);
  auto* pipe_status = pipeline->add_subcommand("status", "Print the journaled state (read-only)");
  auto* pipe_resume = pipeline->add_subcommand("resume", "Recover the run directory and print its state");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    if (dynamic_cast<const CLI::ExtrasError*>(&e) || dynamic_cast<const CLI::RequiredError*>(&e)) {
      const bool unknown = !args.empty() && !args.front().starts_with("-") && app.get_subcommands().empty();
      err << (unknown ? "UnknownCommand: '" + args.front() + "'" : std::string(e.what())) << "\n\n";
    } else {
      err << e.what() << "\n\n";
    }
    err << app.help();
    return kExitFatal;
  }

  try {
    Context ctx{out, err, json::object(), {}, 1, std::nullopt};
    if (!config_path.empty()) {
      ctx.config = read_json_file(config_path);
      if (!ctx.config.is_object()) throw Error(ErrorCode::kInvalidArgument, config_path + ": config must be an object");
      ctx.config_dir = fs::absolute(config_path).parent_path();
    }
    std::string level = ctx.config.value("log_level", std::string("info"));
    if (const char* env = std::getenv("UFW_LOG"); env && *env) level = env;
    if (log_opt->count()) level = log_level;
    spdlog::set_level(parse_level(level));
    ctx.workers = workers_opt->count() ? workers : ctx.config.value("workers", workers);
    if (ctx.workers < 1) throw Error(ErrorCode::kInvalidArgument, "workers must be >= 1");
    if (seed_opt->count()) {
      ctx.seed = seed;
    } else if (ctx.config.contains("seed")) {
      ctx.seed = ctx.config["seed"].get<uint64_t>();
    }

    if (normalize->parsed()) return normalize_cmd.run(ctx);
    if (tokenize->parsed()) return tokenize_cmd.run(ctx);
    if (train_sub->parsed()) return train_cmd.run(ctx);
    if (predict_sub->parsed()) return predict_cmd.run(ctx);
    if (pool_add->parsed()) return pool_cmd.add(ctx);
    if (pool_mark->parsed()) return pool_cmd.mark(ctx);
    if (pool_assemble->parsed()) return pool_cmd.assemble(ctx);
    if (pool_show->parsed()) return pool_cmd.show(ctx);
    if (filter_score->parsed()) return filter_cmd.score(ctx);
    if (filter_intersect->parsed()) return filter_cmd.intersect_cmd(ctx);
    if (filter_stats->parsed()) return filter_cmd.stats(ctx);
    if (verify_plan->parsed()) return verify_cmd.plan(ctx);
    if (verify_report->parsed()) return verify_cmd.report(ctx);
    if (pipe_init->parsed()) return pipe_cmd.init(ctx);
    if (pipe_advance->parsed()) return pipe_cmd.advance(ctx);
    if (pipe_ingest->parsed()) return pipe_cmd.ingest(ctx);
    if (pipe_status->parsed()) return pipe_cmd.status(ctx);
    if (pipe_resume->parsed()) return pipe_cmd.resume_cmd(ctx);
    err << app.help();
    return kExitFatal;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFatal;
  }
}

}  // namespace ufw::cli
