#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufw/classifier.hpp"

namespace ufw {

enum class Polarity { kNegative, kPositive };

std::string_view polarity_name(Polarity p);
Polarity polarity_from_name(std::string_view name);

// Label id used for a polarity under the default {negative, positive} labels.
inline int polarity_label(Polarity p) { return p == Polarity::kPositive ? 1 : 0; }

struct SeedCategory {
  std::string name;
  Polarity polarity = Polarity::kPositive;
  std::string source;
  std::vector<std::string> documents;
  int resample_factor = 1;  // 1..5; above 1 only when underrepresented
  bool underrepresented = false;

  uint64_t effective_size() const { return documents.size() * static_cast<uint64_t>(resample_factor); }
};

// Immutable snapshot of the pool. Every change produces a new version whose
// parent is the version it was derived from.
struct SeedPoolManifest {
  std::vector<SeedCategory> categories;
  uint64_t version = 1;
  std::optional<uint64_t> parent_version;

  // nullptr when absent. Throws kInvalidArgument when `name` exists under
  // both polarities and no polarity is given.
  const SeedCategory* find(std::string_view name, std::optional<Polarity> polarity = std::nullopt) const;
  void validate() const;
};

SeedPoolManifest add_category(const SeedPoolManifest& pool, SeedCategory category);

// Sets the category's resample factor (3..5) in a new version.
// Throws kUnknownCategory, kFactorOutOfRange.
SeedPoolManifest mark_underrepresented(const SeedPoolManifest& pool, std::string_view category_name, int factor,
                                       std::optional<Polarity> polarity = std::nullopt);

struct SeedDraw {
  uint32_t category = 0;  // index into manifest.categories
  uint32_t document = 0;  // index into that category's documents
  int label = 0;
};

// floor(target_size * balance) positives, the rest negatives. Within a
// polarity each category gets total / k, the remainder going one each to
// categories in name order. A category with quota q and n documents yields
// every document q / n times plus q % n distinct documents drawn by seed,
// so no document appears more than resample_factor times. The result is a
// seeded shuffle.
//
// Throws kNoCategories, kInsufficientSeedData, kInvalidArgument.
std::vector<SeedDraw> assemble_draws(const SeedPoolManifest& pool, uint64_t target_size, double balance,
                                     uint64_t seed);
std::vector<LabeledExample> assemble_training_set(const SeedPoolManifest& pool, uint64_t target_size,
                                                  double balance, uint64_t seed);

// Quotas per category index (same order as manifest.categories).
std::vector<uint64_t> category_quotas(const SeedPoolManifest& pool, uint64_t target_size, double balance);

// Directory of manifest files plus content-addressed document shards:
//   manifests/<version>.json
//   docs/<fnv64 hex>.jsonl
// One writer at a time (flock on .lock); readers need no lock.
class SeedPoolStore {
 public:
  explicit SeedPoolStore(std::filesystem::path dir);

  // Stores `manifest` under the next free version, keeping its parent.
  // Returns the stored manifest (version reassigned).
  SeedPoolManifest commit(SeedPoolManifest manifest);
  SeedPoolManifest load(uint64_t version) const;
  std::optional<uint64_t> latest_version() const;
  std::vector<uint64_t> versions() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::string write_shard(const std::vector<std::string>& documents);
  std::vector<std::string> read_shard(const std::string& hash) const;

  std::filesystem::path dir_;
};

nlohmann::json manifest_summary(const SeedPoolManifest& manifest);

}  // namespace ufw
