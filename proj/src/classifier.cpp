#include "ufw/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ufw/error.hpp"
#include "ufw/utf8.hpp"

namespace ufw {

// ---------------------------------------------------------------- config

void ClassifierConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (dim < 1) bad("dim must be >= 1");
  if (epochs < 1) bad("epochs must be >= 1");
  if (word_ngrams < 1) bad("word_ngrams must be >= 1");
  if (min_count < 1) bad("min_count must be >= 1");
  if (bucket < 1) bad("bucket must be >= 1");
  if (!(lr > 0.0)) bad("lr must be > 0");
  if (minn != 0 || maxn != 0) bad("character n-grams (minn/maxn) are not supported");
  if (labels.size() != 2) bad("exactly two labels are required");
  if (labels[0] == labels[1]) bad("labels must be distinct");
}

int ClassifierConfig::label_index(std::string_view name) const {
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kUnknownLabel, "label '" + std::string(name) + "' is not configured");
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.dim = j.value("dim", c.dim);
  c.lr = j.value("lr", c.lr);
  c.word_ngrams = j.value("word_ngrams", c.word_ngrams);
  c.min_count = j.value("min_count", c.min_count);
  c.epochs = j.value("epochs", c.epochs);
  c.bucket = j.value("bucket", c.bucket);
  c.seed = j.value("seed", c.seed);
  c.minn = j.value("minn", c.minn);
  c.maxn = j.value("maxn", c.maxn);
  c.labels = j.value("labels", c.labels);
  c.validate();
  return c;
}

nlohmann::json classifier_config_to_json(const ClassifierConfig& c) {
  return {{"dim", c.dim},       {"lr", c.lr},         {"word_ngrams", c.word_ngrams},
          {"min_count", c.min_count}, {"epochs", c.epochs}, {"bucket", c.bucket},
          {"seed", c.seed},     {"minn", c.minn},     {"maxn", c.maxn},
          {"labels", c.labels}};
}

// ------------------------------------------------------------ vocabulary

Vocabulary::Vocabulary(const Vocabulary& other) : tokens_(other.tokens_), counts_(other.counts_) {
  reindex();
}

Vocabulary& Vocabulary::operator=(const Vocabulary& other) {
  if (this != &other) {
    tokens_ = other.tokens_;
    counts_ = other.counts_;
    reindex();
  }
  return *this;
}

void Vocabulary::reindex() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(std::string_view(tokens_[i]), static_cast<int32_t>(i));
  }
}

int32_t Vocabulary::add(std::string token, uint64_t count) {
  if (find(token) >= 0) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate vocabulary token");
  }
  const bool grows = tokens_.size() == tokens_.capacity();
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
  const auto id = static_cast<int32_t>(tokens_.size() - 1);
  if (grows) {
    reindex();  // short strings moved with the buffer
  } else {
    index_.emplace(std::string_view(tokens_.back()), id);
  }
  return id;
}

int32_t Vocabulary::find(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

namespace {

template <typename Token>
Vocabulary build_vocab_impl(std::span<const std::vector<Token>> corpus, const ClassifierConfig& config) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot build a vocabulary from no documents");
  std::unordered_map<std::string_view, size_t> slot;
  std::vector<std::string_view> order;
  std::vector<uint64_t> counts;
  for (const auto& doc : corpus) {
    for (const auto& tok : doc) {
      std::string_view t(tok);
      auto [it, inserted] = slot.try_emplace(t, order.size());
      if (inserted) {
        order.push_back(t);
        counts.push_back(0);
      }
      ++counts[it->second];
    }
  }
  Vocabulary vocab;
  for (size_t i = 0; i < order.size(); ++i) {
    if (counts[i] >= static_cast<uint64_t>(config.min_count)) vocab.add(std::string(order[i]), counts[i]);
  }
  if (vocab.size() == 0) {
    throw Error(ErrorCode::kEmptyVocabulary,
                "no token occurs at least min_count=" + std::to_string(config.min_count) + " times");
  }
  return vocab;
}

}  // namespace

Vocabulary build_vocab(std::span<const std::vector<std::string_view>> corpus, const ClassifierConfig& config) {
  return build_vocab_impl(corpus, config);
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus, const ClassifierConfig& config) {
  return build_vocab_impl(corpus, config);
}

// --------------------------------------------------------- featurization

uint64_t ngram_hash(std::span<const uint64_t> token_hashes) {
  if (token_hashes.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "ngram_hash needs at least two token hashes");
  }
  uint64_t h = token_hashes[0];
  for (size_t i = 1; i < token_hashes.size(); ++i) h = h * kNgramHashMultiplier + token_hashes[i];
  return h;
}

void featurize_into(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                    const ClassifierConfig& config, std::vector<int64_t>& out,
                    std::vector<uint64_t>& hashes) {
  out.clear();
  hashes.clear();
  const auto n = tokens.size();
  for (const auto& tok : tokens) {
    const int32_t id = vocab.find(tok);
    if (id >= 0) out.push_back(id);
    hashes.push_back(token_hash(tok));
  }
  const auto base = static_cast<int64_t>(vocab.size());
  const auto order = static_cast<size_t>(config.word_ngrams);
  for (size_t i = 0; i < n; ++i) {
    uint64_t h = hashes[i];
    for (size_t j = i + 1; j < n && j < i + order; ++j) {
      h = h * kNgramHashMultiplier + hashes[j];
      out.push_back(base + static_cast<int64_t>(h % config.bucket));
    }
  }
}

std::vector<int64_t> featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                               const ClassifierConfig& config) {
  std::vector<int64_t> out;
  std::vector<uint64_t> hashes;
  featurize_into(tokens, vocab, config, out, hashes);
  return out;
}

// ------------------------------------------------------------ math core

namespace {

void softmax(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : logits) v /= z;
}

// Eight fixed partial sums: vectorizes without reassociation flags and
// gives the same result on every target.
double dot(const double* a, const double* b, size_t n) {
  double part[8] = {};
  size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (size_t j = 0; j < 8; ++j) part[j] += a[k + j] * b[k + j];
  }
  for (; k < n; ++k) part[k % 8] += a[k] * b[k];
  return ((part[0] + part[4]) + (part[1] + part[5])) + ((part[2] + part[6]) + (part[3] + part[7]));
}

// probs = softmax(output . hidden)
void forward(std::span<const double> output, std::span<const double> hidden, int num_labels,
             std::span<double> probs) {
  const size_t dim = hidden.size();
  for (int l = 0; l < num_labels; ++l) {
    const double* row = output.data() + static_cast<size_t>(l) * dim;
    double s = 0.0;
    for (size_t k = 0; k < dim; ++k) s += row[k] * hidden[k];
    probs[static_cast<size_t>(l)] = s;
  }
  softmax(probs);
}

}  // namespace

ExampleGradient example_gradient(const DenseParameters& params, std::span<const int64_t> features,
                                 int label) {
  const auto dim = static_cast<size_t>(params.dim);
  const auto labels = static_cast<size_t>(params.num_labels);
  ExampleGradient g;
  g.output.assign(labels * dim, 0.0);
  std::vector<double> hidden(dim, 0.0);
  for (int64_t id : features) {
    const double* row = params.input.data() + static_cast<size_t>(id) * dim;
    for (size_t k = 0; k < dim; ++k) hidden[k] += row[k];
  }
  if (!features.empty()) {
    for (double& v : hidden) v /= static_cast<double>(features.size());
  }
  std::vector<double> probs(labels);
  forward(params.output, hidden, params.num_labels, probs);
  g.loss = -std::log(probs[static_cast<size_t>(label)]);

  // dL/dz_l = p_l - [l == y]; dL/dW_l = (p_l - [l == y]) h; dL/dh = sum_l (...) W_l.
  std::vector<double> grad_hidden(dim, 0.0);
  for (size_t l = 0; l < labels; ++l) {
    const double coeff = probs[l] - (static_cast<int>(l) == label ? 1.0 : 0.0);
    const double* row = params.output.data() + l * dim;
    for (size_t k = 0; k < dim; ++k) {
      g.output[l * dim + k] = coeff * hidden[k];
      grad_hidden[k] += coeff * row[k];
    }
  }
  if (features.empty()) return g;
  const double inv_n = 1.0 / static_cast<double>(features.size());
  for (int64_t id : features) {
    auto& row = g.input[id];
    if (row.empty()) row.assign(dim, 0.0);
    for (size_t k = 0; k < dim; ++k) row[k] += grad_hidden[k] * inv_n;
  }
  return g;
}

// ------------------------------------------------------------------ model

namespace {

// One 64-bit mix per row, then a 32-bit integer hash per column so the
// column loop vectorizes.
inline uint32_t mix32(uint32_t x) noexcept {
  x ^= x >> 16;
  x *= 0x7feb352du;
  x ^= x >> 15;
  x *= 0x846ca68bu;
  x ^= x >> 16;
  return x;
}

inline uint64_t row_key(uint64_t seed, int64_t row) noexcept {
  return splitmix64(seed ^ splitmix64(static_cast<uint64_t>(row)));
}

#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__)
#define UFW_VECTOR_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define UFW_VECTOR_CLONES
#endif

// Writes the seeded initial row. Integer mixing plus one multiply and one
// subtract per cell, so every clone produces the same bits.
UFW_VECTOR_CLONES void fill_initial_row(uint64_t seed, int64_t row, int dim, double* out) {
  const uint64_t key = row_key(seed, row);
  const uint32_t offset = static_cast<uint32_t>(key);
  const uint32_t salt = static_cast<uint32_t>(key >> 32);
  const double scale = 0x1.0p-24 * 2.0 / static_cast<double>(dim);
  const double shift = 1.0 / static_cast<double>(dim);
  for (int k = 0; k < dim; ++k) {
    const uint32_t x = mix32((offset + static_cast<uint32_t>(k) * 0x9e3779b9u) ^ salt);
    out[k] = static_cast<double>(static_cast<int32_t>(x >> 8)) * scale - shift;
  }
}

}  // namespace

double initial_input_value(uint64_t seed, int64_t row, int col, int dim) noexcept {
  const uint64_t key = row_key(seed, row);
  const uint32_t x = mix32((static_cast<uint32_t>(key) + static_cast<uint32_t>(col) * 0x9e3779b9u) ^
                           static_cast<uint32_t>(key >> 32));
  return static_cast<double>(static_cast<int32_t>(x >> 8)) * (0x1.0p-24 * 2.0 / static_cast<double>(dim)) -
         1.0 / static_cast<double>(dim);
}

ClassifierModel untrained_model(ClassifierConfig config, Vocabulary vocab) {
  config.validate();
  ClassifierModel m;
  m.config_ = std::move(config);
  m.vocab_ = std::move(vocab);
  const auto dim = static_cast<size_t>(m.config_.dim);
  m.vocab_rows_.assign(m.vocab_.size() * dim, 0.0);
  for (size_t r = 0; r < m.vocab_.size(); ++r) {
    fill_initial_row(m.config_.seed, static_cast<int64_t>(r), m.config_.dim, m.vocab_rows_.data() + r * dim);
  }
  m.output_.assign(m.config_.labels.size() * dim, 0.0);
  return m;
}

void ClassifierModel::add_row(int64_t id, double* acc) const {
  const auto dim = static_cast<size_t>(config_.dim);
  const auto v = static_cast<int64_t>(vocab_.size());
  const double* row = nullptr;
  if (id < v) {
    row = vocab_rows_.data() + static_cast<size_t>(id) * dim;
  } else {
    auto it = bucket_slot_.find(static_cast<uint64_t>(id - v));
    if (it == bucket_slot_.end()) {
      thread_local std::vector<double> init;
      init.resize(dim);
      fill_initial_row(config_.seed, id, config_.dim, init.data());
      for (size_t k = 0; k < dim; ++k) acc[k] += init[k];
      return;
    }
    row = bucket_rows_.data() + static_cast<size_t>(it->second) * dim;
  }
  for (size_t k = 0; k < dim; ++k) acc[k] += row[k];
}

double* ClassifierModel::mutable_row(int64_t id) {
  const auto dim = static_cast<size_t>(config_.dim);
  const auto v = static_cast<int64_t>(vocab_.size());
  if (id < v) return vocab_rows_.data() + static_cast<size_t>(id) * dim;
  const auto b = static_cast<uint64_t>(id - v);
  auto [it, inserted] = bucket_slot_.try_emplace(b, static_cast<uint32_t>(bucket_slot_.size()));
  if (inserted) {
    bucket_rows_.resize(bucket_rows_.size() + dim, 0.0);
    fill_initial_row(config_.seed, id, config_.dim, bucket_rows_.data() + static_cast<size_t>(it->second) * dim);
  }
  return bucket_rows_.data() + static_cast<size_t>(it->second) * dim;
}

void ClassifierModel::input_row(int64_t id, std::span<double> out) const {
  if (id < 0 || static_cast<uint64_t>(id) >= input_rows() || out.size() != static_cast<size_t>(dim())) {
    throw Error(ErrorCode::kInvalidArgument, "input row out of range");
  }
  std::fill(out.begin(), out.end(), 0.0);
  add_row(id, out.data());
}

const std::vector<double>& ClassifierModel::logit_table() const {
  std::call_once(logits_->once, [this] {
    const auto dim = static_cast<size_t>(config_.dim);
    const auto labels = static_cast<size_t>(num_labels());
    const uint64_t rows = input_rows();
    auto& table = logits_->values;
    table.resize(rows * labels);
    std::vector<double> row(dim);
    for (uint64_t r = 0; r < rows; ++r) {
      std::fill(row.begin(), row.end(), 0.0);
      add_row(static_cast<int64_t>(r), row.data());
      for (size_t l = 0; l < labels; ++l) table[r * labels + l] = dot(output_.data() + l * dim, row.data(), dim);
    }
  });
  return logits_->values;
}

Prediction ClassifierModel::predict_features(std::span<const int64_t> features) const {
  // Logits are linear in the summed rows, so each row contributes its
  // output . row, tabulated once per model.
  const auto labels = static_cast<size_t>(num_labels());
  const auto& table = logit_table();
  std::vector<double> logits(labels, 0.0);
  for (int64_t id : features) {
    for (size_t l = 0; l < labels; ++l) logits[l] += table[static_cast<size_t>(id) * labels + l];
  }
  if (!features.empty()) {
    const double inv = 1.0 / static_cast<double>(features.size());
    for (double& z : logits) z *= inv;
  }
  softmax(logits);
  Prediction p;
  p.feature_count = features.size();
  p.distribution = std::move(logits);
  // Ties go to the earlier label.
  p.label = 0;
  for (int l = 1; l < num_labels(); ++l) {
    if (p.distribution[static_cast<size_t>(l)] > p.distribution[static_cast<size_t>(p.label)]) p.label = l;
  }
  p.probability = p.distribution[static_cast<size_t>(p.label)];
  return p;
}

Prediction ClassifierModel::predict_tokens(std::span<const std::string_view> tokens) const {
  std::vector<int64_t> features;
  std::vector<uint64_t> hashes;
  featurize_into(tokens, vocab_, config_, features, hashes);
  return predict_features(features);
}

Prediction ClassifierModel::predict(std::string_view text, const Tokenizer& tokenizer) const {
  const auto tokens = tokenizer.tokenize(text);
  return predict_tokens(tokens);
}

int ClassifierModel::positive_label() const {
  for (size_t i = 0; i < config_.labels.size(); ++i) {
    if (config_.labels[i] == "positive") return static_cast<int>(i);
  }
  return num_labels() - 1;
}

double ClassifierModel::positive_probability(std::string_view text, const Tokenizer& tokenizer) const {
  return predict(text, tokenizer).distribution[static_cast<size_t>(positive_label())];
}

double ClassifierModel::mean_loss(std::span<const LabeledExample> examples, const Tokenizer& tokenizer) const {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto p = predict(ex.text, tokenizer);
    total += -std::log(p.distribution.at(static_cast<size_t>(ex.label)));
  }
  return total / static_cast<double>(examples.size());
}

// --------------------------------------------------------------- training

class Trainer {
 public:
  static ClassifierModel run(std::span<const LabeledExample> dataset, const ClassifierConfig& config,
                             const Tokenizer& tokenizer, TrainStats* stats) {
    config.validate();
    if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
    const int labels = static_cast<int>(config.labels.size());
    std::vector<std::vector<std::string_view>> tokenized;
    tokenized.reserve(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].label < 0 || dataset[i].label >= labels) {
        throw Error(ErrorCode::kUnknownLabel, "example " + std::to_string(i) + " has label id " +
                                                  std::to_string(dataset[i].label));
      }
      tokenized.push_back(tokenizer.tokenize(dataset[i].text));
    }
    ClassifierModel model = untrained_model(config, build_vocab(tokenized, config));

    std::vector<std::vector<int64_t>> features(dataset.size());
    std::vector<uint64_t> scratch;
    for (size_t i = 0; i < dataset.size(); ++i) {
      featurize_into(tokenized[i], model.vocab_, config, features[i], scratch);
    }

    const auto dim = static_cast<size_t>(config.dim);
    std::vector<double> hidden(dim), grad(dim), probs(static_cast<size_t>(labels));
    const double total = static_cast<double>(config.epochs) * static_cast<double>(dataset.size());
    uint64_t processed = 0;
    TrainStats local;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      double loss_sum = 0.0;
      uint64_t loss_n = 0;
      for (size_t i = 0; i < dataset.size(); ++i) {
        const double lr = config.lr * (1.0 - static_cast<double>(processed) / total);
        ++processed;
        const auto& feats = features[i];
        if (feats.empty()) {
          if (epoch == 0) ++local.zero_feature_examples;
          continue;
        }
        std::fill(hidden.begin(), hidden.end(), 0.0);
        for (int64_t id : feats) {
          const double* row = model.mutable_row(id);
          for (size_t k = 0; k < dim; ++k) hidden[k] += row[k];
        }
        const double inv_n = 1.0 / static_cast<double>(feats.size());
        for (double& v : hidden) v *= inv_n;
        forward(model.output_, hidden, labels, probs);
        const int y = dataset[i].label;
        loss_sum += -std::log(probs[static_cast<size_t>(y)]);
        ++loss_n;

        // Step along the negative gradient: alpha = lr * ([l == y] - p_l).
        std::fill(grad.begin(), grad.end(), 0.0);
        for (int l = 0; l < labels; ++l) {
          const double alpha = lr * ((l == y ? 1.0 : 0.0) - probs[static_cast<size_t>(l)]);
          double* out = model.output_.data() + static_cast<size_t>(l) * dim;
          for (size_t k = 0; k < dim; ++k) {
            grad[k] += alpha * out[k];
            out[k] += alpha * hidden[k];
          }
        }
        for (double& v : grad) v *= inv_n;
        for (int64_t id : feats) {
          double* row = model.mutable_row(id);
          for (size_t k = 0; k < dim; ++k) row[k] += grad[k];
        }
      }
      local.epoch_mean_loss.push_back(loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0);
    }
    local.examples_processed = processed;
    if (stats) *stats = std::move(local);
    model.logits_ = std::make_shared<ClassifierModel::LogitTable>();
    return model;
  }
};

ClassifierModel train(std::span<const LabeledExample> dataset, const ClassifierConfig& config,
                      const Tokenizer& tokenizer, TrainStats* stats) {
  return Trainer::run(dataset, config, tokenizer, stats);
}

// ---------------------------------------------------------- serialization

namespace {

constexpr char kMagic[4] = {'U', 'F', 'W', 'C'};
constexpr uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  void raw(const void* p, size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { le(v); }
  void u64(uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& bytes() { return out_; }

 private:
  template <typename T>
  void le(T v) {
    for (size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  uint32_t u32() { return le<uint32_t>(); }
  uint64_t u64() { return le<uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<uint64_t>()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorCode::kCorruptPayload, "model payload truncated");
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<uint8_t>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  std::string_view in_;
  size_t pos_ = 0;
};

}  // namespace

std::string ClassifierModel::serialize() const {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<uint32_t>(config_.dim));
  w.f64(config_.lr);
  w.u32(static_cast<uint32_t>(config_.word_ngrams));
  w.u32(static_cast<uint32_t>(config_.min_count));
  w.u32(static_cast<uint32_t>(config_.epochs));
  w.u64(config_.bucket);
  w.u64(config_.seed);
  w.u32(static_cast<uint32_t>(config_.minn));
  w.u32(static_cast<uint32_t>(config_.maxn));
  w.u32(static_cast<uint32_t>(config_.labels.size()));
  for (const auto& l : config_.labels) w.str(l);

  w.u64(vocab_.size());
  for (size_t i = 0; i < vocab_.size(); ++i) {
    w.str(vocab_.token(static_cast<int32_t>(i)));
    w.u64(vocab_.count(static_cast<int32_t>(i)));
  }
  for (double v : vocab_rows_) w.f64(v);

  std::vector<std::pair<uint64_t, uint32_t>> slots(bucket_slot_.begin(), bucket_slot_.end());
  std::sort(slots.begin(), slots.end());
  const auto dim = static_cast<size_t>(config_.dim);
  w.u64(slots.size());
  for (const auto& [bucket, slot] : slots) {
    w.u64(bucket);
    const double* row = bucket_rows_.data() + static_cast<size_t>(slot) * dim;
    for (size_t k = 0; k < dim; ++k) w.f64(row[k]);
  }
  for (double v : output_) w.f64(v);
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

ClassifierModel ClassifierModel::deserialize(std::string_view bytes) {
  if (bytes.size() < 8) throw Error(ErrorCode::kCorruptPayload, "model file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, "not a UFWC model file");
  ByteReader header(bytes.substr(4, 4));
  const uint32_t version = header.u32();
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "model format version " + std::to_string(version));
  }
  if (bytes.size() < 16) throw Error(ErrorCode::kCorruptPayload, "model file too short");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  ByteReader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64() != fnv1a64(body)) throw Error(ErrorCode::kCorruptPayload, "checksum mismatch");

  ByteReader r(body.substr(8));
  ClassifierConfig c;
  c.dim = static_cast<int>(r.u32());
  c.lr = r.f64();
  c.word_ngrams = static_cast<int>(r.u32());
  c.min_count = static_cast<int>(r.u32());
  c.epochs = static_cast<int>(r.u32());
  c.bucket = r.u64();
  c.seed = r.u64();
  c.minn = static_cast<int>(r.u32());
  c.maxn = static_cast<int>(r.u32());
  const uint32_t nlabels = r.u32();
  if (nlabels > 1024) throw Error(ErrorCode::kCorruptPayload, "implausible label count");
  c.labels.clear();
  for (uint32_t i = 0; i < nlabels; ++i) c.labels.push_back(r.str());
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptPayload, e.what());
  }

  const uint64_t vsize = r.u64();
  if (vsize > body.size()) throw Error(ErrorCode::kCorruptPayload, "implausible vocabulary size");
  Vocabulary vocab;
  for (uint64_t i = 0; i < vsize; ++i) {
    std::string tok = r.str();
    const uint64_t count = r.u64();
    if (vocab.find(tok) >= 0) throw Error(ErrorCode::kCorruptPayload, "duplicate vocabulary token");
    vocab.add(std::move(tok), count);
  }
  ClassifierModel m;
  m.config_ = std::move(c);
  m.vocab_ = std::move(vocab);
  const auto dim = static_cast<size_t>(m.config_.dim);
  if (m.vocab_.size() * dim * 8 > body.size()) throw Error(ErrorCode::kCorruptPayload, "payload too small");
  m.vocab_rows_.resize(m.vocab_.size() * dim);
  for (double& v : m.vocab_rows_) v = r.f64();
  const uint64_t stored = r.u64();
  if (stored > body.size() / 8) throw Error(ErrorCode::kCorruptPayload, "implausible bucket row count");
  m.bucket_rows_.reserve(stored * dim);
  for (uint64_t s = 0; s < stored; ++s) {
    const uint64_t bucket = r.u64();
    if (bucket >= m.config_.bucket || !m.bucket_slot_.emplace(bucket, static_cast<uint32_t>(s)).second) {
      throw Error(ErrorCode::kCorruptPayload, "bad bucket row index");
    }
    for (size_t k = 0; k < dim; ++k) m.bucket_rows_.push_back(r.f64());
  }
  m.output_.resize(m.config_.labels.size() * dim);
  for (double& v : m.output_) v = r.f64();
  if (!r.done()) throw Error(ErrorCode::kCorruptPayload, "trailing bytes in model payload");
  return m;
}

void ClassifierModel::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write model to " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read model " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

// --------------------------------------------------------- training files

namespace {

constexpr std::string_view kLabelPrefix = "__label__";

}  // namespace

std::vector<LabeledExample> read_training_file(const std::filesystem::path& path,
                                               const ClassifierConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read training file " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line.starts_with(kLabelPrefix)) {
      const size_t sp = line.find(' ');
      const std::string_view name =
          std::string_view(line).substr(kLabelPrefix.size(), sp == std::string::npos ? std::string::npos
                                                                                        : sp - kLabelPrefix.size());
      LabeledExample ex;
      ex.label = config.label_index(name);
      ex.text = sp == std::string::npos ? std::string() : line.substr(sp + 1);
      utf8::require_valid(ex.text);
      out.push_back(std::move(ex));
    } else if (line.front() == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kMalformedRecord, where + ": " + e.what());
      }
      if (!j.contains("text") || !j["text"].is_string() || !j.contains("label") || !j["label"].is_string()) {
        throw Error(ErrorCode::kMalformedRecord, where + ": expected string 'text' and 'label'");
      }
      std::string name = j["label"].get<std::string>();
      if (name.starts_with(kLabelPrefix)) name.erase(0, kLabelPrefix.size());
      out.push_back({j["text"].get<std::string>(), config.label_index(name)});
    } else {
      throw Error(ErrorCode::kMalformedRecord, where + ": expected __label__ prefix or JSON object");
    }
  }
  return out;
}

std::string format_training_line(const LabeledExample& example, const ClassifierConfig& config) {
  std::string text = example.text;
  // The line format cannot carry newlines.
  std::replace(text.begin(), text.end(), '\n', ' ');
  return std::string(kLabelPrefix) + config.labels.at(static_cast<size_t>(example.label)) + " " + text;
}

}  // namespace ufw
