#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ufw/hash.hpp"
#include "ufw/tokenize.hpp"

namespace ufw {

struct ClassifierConfig {
  int dim = 256;
  double lr = 0.1;
  int word_ngrams = 3;
  int min_count = 5;
  int epochs = 3;
  uint64_t bucket = 2'000'000;
  uint64_t seed = 0;
  // Character subword n-grams are not used; kept so configs and model files
  // have a place for them.
  int minn = 0;
  int maxn = 0;
  std::vector<std::string> labels{"negative", "positive"};

  void validate() const;
  int label_index(std::string_view name) const;  // throws kUnknownLabel
  bool operator==(const ClassifierConfig&) const = default;
};

ClassifierConfig classifier_config_from_json(const nlohmann::json& j);
nlohmann::json classifier_config_to_json(const ClassifierConfig& c);

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(const Vocabulary& other);
  Vocabulary& operator=(const Vocabulary& other);
  Vocabulary(Vocabulary&&) noexcept = default;
  Vocabulary& operator=(Vocabulary&&) noexcept = default;

  // Ids are dense and assigned in call order.
  int32_t add(std::string token, uint64_t count);
  // -1 when absent.
  int32_t find(std::string_view token) const;

  size_t size() const { return tokens_.size(); }
  const std::string& token(int32_t id) const { return tokens_[static_cast<size_t>(id)]; }
  uint64_t count(int32_t id) const { return counts_[static_cast<size_t>(id)]; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && counts_ == o.counts_; }

 private:
  void reindex();

  std::vector<std::string> tokens_;
  std::vector<uint64_t> counts_;
  // Keys view into tokens_; rebuilt on copy.
  std::unordered_map<std::string_view, int32_t> index_;
};

// Tokens with global count >= min_count, ids in first-occurrence order.
// Throws kEmptyDataset on an empty corpus, kEmptyVocabulary when nothing
// survives the threshold.
Vocabulary build_vocab(std::span<const std::vector<std::string_view>> corpus,
                       const ClassifierConfig& config);
Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus, const ClassifierConfig& config);

// FNV-1a 32 of the token bytes, zero-extended.
inline uint64_t token_hash(std::string_view token) noexcept { return fnv1a32(token); }

constexpr uint64_t kNgramHashMultiplier = 116049371ull;

// h = hashes[0]; h = h * 116049371 + t for each following t (wrapping).
// Throws kInvalidArgument for fewer than two hashes.
uint64_t ngram_hash(std::span<const uint64_t> token_hashes);

// In-vocabulary unigram ids in token order, then one id per contiguous
// n-gram of length 2..word_ngrams (by start position, then length), mapped
// to V + hash % bucket. OOV tokens contribute to n-grams through their hash.
std::vector<int64_t> featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                               const ClassifierConfig& config);
void featurize_into(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                    const ClassifierConfig& config, std::vector<int64_t>& out,
                    std::vector<uint64_t>& hash_scratch);

struct LabeledExample {
  std::string text;
  int label = 0;
};

// Dense parameter block used for gradient checks and small desk models.
struct DenseParameters {
  int dim = 0;
  int num_labels = 0;
  std::vector<double> input;   // rows x dim
  std::vector<double> output;  // num_labels x dim
};

struct ExampleGradient {
  double loss = 0.0;
  std::vector<double> output;                               // num_labels x dim
  std::unordered_map<int64_t, std::vector<double>> input;   // per touched row
};

// Loss -log softmax(output . mean(input rows))[label] and its exact gradient.
ExampleGradient example_gradient(const DenseParameters& params, std::span<const int64_t> features,
                                 int label);

struct Prediction {
  int label = 0;
  double probability = 0.0;
  std::vector<double> distribution;
  size_t feature_count = 0;
};

// The trained scorer. Immutable once built; share across threads.
//
// Logically input_matrix is (V + bucket) x dim. Vocabulary rows are stored
// densely. Hashed rows are stored only once training touched them; every
// other row still holds its seeded initial value, which is recomputed on
// demand, so the logical matrix is never materialised.
class ClassifierModel {
 public:
  const ClassifierConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  int dim() const { return config_.dim; }
  int num_labels() const { return static_cast<int>(config_.labels.size()); }
  uint64_t input_rows() const { return vocab_.size() + config_.bucket; }

  // Copies logical input row `id` into `out` (dim values).
  void input_row(int64_t id, std::span<double> out) const;
  std::span<const double> output_matrix() const { return output_; }
  size_t stored_bucket_rows() const { return bucket_slot_.size(); }

  Prediction predict_features(std::span<const int64_t> features) const;
  Prediction predict_tokens(std::span<const std::string_view> tokens) const;
  Prediction predict(std::string_view text, const Tokenizer& tokenizer) const;
  // Probability of the label named "positive" (or the last label).
  double positive_probability(std::string_view text, const Tokenizer& tokenizer) const;
  int positive_label() const;

  // Mean -log p(label) over examples.
  double mean_loss(std::span<const LabeledExample> examples, const Tokenizer& tokenizer) const;

  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static ClassifierModel load(const std::filesystem::path& path);
  static ClassifierModel deserialize(std::string_view bytes);

 private:
  friend class Trainer;
  friend ClassifierModel untrained_model(ClassifierConfig config, Vocabulary vocab);

  void add_row(int64_t id, double* acc) const;
  double* mutable_row(int64_t id);
  const std::vector<double>& logit_table() const;

  ClassifierConfig config_;
  Vocabulary vocab_;
  std::vector<double> vocab_rows_;                     // V x dim
  std::unordered_map<uint64_t, uint32_t> bucket_slot_;  // bucket index -> slot
  std::vector<double> bucket_rows_;                    // slots x dim
  std::vector<double> output_;                         // labels x dim
  // output . row for every logical input row, built on first prediction.
  // Shared by copies; training replaces it.
  struct LogitTable {
    std::once_flag once;
    std::vector<double> values;
  };
  std::shared_ptr<LogitTable> logits_ = std::make_shared<LogitTable>();
};

// Seeded initial value of input cell (row, col): uniform in [-1/dim, 1/dim].
double initial_input_value(uint64_t seed, int64_t row, int col, int dim) noexcept;

// Model with seeded input rows and a zero output matrix.
ClassifierModel untrained_model(ClassifierConfig config, Vocabulary vocab);

struct TrainStats {
  std::vector<double> epoch_mean_loss;
  uint64_t examples_processed = 0;
  uint64_t zero_feature_examples = 0;
};

// Sequential SGD over `dataset` in the given order; deterministic given
// (dataset, config). Throws kEmptyDataset, kUnknownLabel.
ClassifierModel train(std::span<const LabeledExample> dataset, const ClassifierConfig& config,
                      const Tokenizer& tokenizer, TrainStats* stats = nullptr);

// "__label__<name> <text>" lines, or Document JSONL with a "label" field.
std::vector<LabeledExample> read_training_file(const std::filesystem::path& path,
                                               const ClassifierConfig& config);
std::string format_training_line(const LabeledExample& example, const ClassifierConfig& config);

}  // namespace ufw
