#include "ufw/seedpool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "ufw/error.hpp"
#include "ufw/fileutil.hpp"
#include "ufw/hash.hpp"
#include "ufw/rng.hpp"

namespace fs = std::filesystem;

namespace ufw {

std::string_view polarity_name(Polarity p) { return p == Polarity::kPositive ? "positive" : "negative"; }

Polarity polarity_from_name(std::string_view name) {
  if (name == "positive") return Polarity::kPositive;
  if (name == "negative") return Polarity::kNegative;
  throw Error(ErrorCode::kInvalidArgument, "polarity must be 'positive' or 'negative', got '" + std::string(name) + "'");
}

const SeedCategory* SeedPoolManifest::find(std::string_view name, std::optional<Polarity> polarity) const {
  const SeedCategory* hit = nullptr;
  for (const auto& c : categories) {
    if (c.name != name || (polarity && c.polarity != *polarity)) continue;
    if (hit) {
      throw Error(ErrorCode::kInvalidArgument,
                  "category '" + std::string(name) + "' exists under both polarities; specify one");
    }
    hit = &c;
  }
  return hit;
}

void SeedPoolManifest::validate() const {
  std::set<std::pair<Polarity, std::string>> seen;
  for (const auto& c : categories) {
    if (c.name.empty()) throw Error(ErrorCode::kInvalidArgument, "category name must be non-empty");
    if (!seen.emplace(c.polarity, c.name).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate " + std::string(polarity_name(c.polarity)) +
                                                   " category '" + c.name + "'");
    }
    if (c.resample_factor < 1 || c.resample_factor > 5) {
      throw Error(ErrorCode::kFactorOutOfRange, "category '" + c.name + "' has resample factor " +
                                                    std::to_string(c.resample_factor));
    }
    if (c.resample_factor > 1 && !c.underrepresented) {
      throw Error(ErrorCode::kInvalidArgument,
                  "category '" + c.name + "' resamples without being marked underrepresented");
    }
  }
  if (parent_version && *parent_version >= version) {
    throw Error(ErrorCode::kInvalidArgument, "parent version must precede version");
  }
}

namespace {

SeedPoolManifest next_version(const SeedPoolManifest& pool) {
  SeedPoolManifest next = pool;
  next.parent_version = pool.version;
  next.version = pool.version + 1;
  return next;
}

}  // namespace

SeedPoolManifest add_category(const SeedPoolManifest& pool, SeedCategory category) {
  if (pool.find(category.name, category.polarity)) {
    throw Error(ErrorCode::kInvalidArgument, "category '" + category.name + "' already exists");
  }
  SeedPoolManifest next = next_version(pool);
  next.categories.push_back(std::move(category));
  next.validate();
  return next;
}

SeedPoolManifest mark_underrepresented(const SeedPoolManifest& pool, std::string_view category_name, int factor,
                                       std::optional<Polarity> polarity) {
  if (factor < 3 || factor > 5) {
    throw Error(ErrorCode::kFactorOutOfRange, "resample factor must be 3..5, got " + std::to_string(factor));
  }
  const SeedCategory* found = pool.find(category_name, polarity);
  if (!found) throw Error(ErrorCode::kUnknownCategory, "no category '" + std::string(category_name) + "'");
  SeedPoolManifest next = next_version(pool);
  auto& cat = next.categories[static_cast<size_t>(found - pool.categories.data())];
  cat.resample_factor = factor;
  cat.underrepresented = true;
  return next;
}

// ------------------------------------------------------------- assembly

namespace {

struct PolaritySplit {
  uint64_t positives = 0;
  uint64_t negatives = 0;
};

PolaritySplit split_target(uint64_t target_size, double balance) {
  if (!(balance >= 0.0 && balance <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "balance must be within [0, 1]");
  }
  if (balance == 0.5 && target_size % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "target size must be even for a 0.5 balance");
  }
  PolaritySplit s;
  s.positives = static_cast<uint64_t>(std::floor(static_cast<double>(target_size) * balance));
  s.negatives = target_size - s.positives;
  return s;
}

}  // namespace

std::vector<uint64_t> category_quotas(const SeedPoolManifest& pool, uint64_t target_size, double balance) {
  const PolaritySplit split = split_target(target_size, balance);
  std::vector<uint64_t> quotas(pool.categories.size(), 0);
  for (Polarity pol : {Polarity::kPositive, Polarity::kNegative}) {
    std::vector<size_t> members;
    for (size_t i = 0; i < pool.categories.size(); ++i) {
      if (pool.categories[i].polarity == pol) members.push_back(i);
    }
    if (members.empty()) {
      throw Error(ErrorCode::kNoCategories, "no " + std::string(polarity_name(pol)) + " categories in pool");
    }
    std::sort(members.begin(), members.end(),
              [&](size_t a, size_t b) { return pool.categories[a].name < pool.categories[b].name; });
    const uint64_t total = pol == Polarity::kPositive ? split.positives : split.negatives;
    const uint64_t k = members.size();
    for (size_t r = 0; r < members.size(); ++r) quotas[members[r]] = total / k + (r < total % k ? 1 : 0);
  }
  return quotas;
}

std::vector<SeedDraw> assemble_draws(const SeedPoolManifest& pool, uint64_t target_size, double balance,
                                     uint64_t seed) {
  pool.validate();
  const auto quotas = category_quotas(pool, target_size, balance);

  std::vector<SeedDraw> draws;
  draws.reserve(target_size);
  for (size_t ci = 0; ci < pool.categories.size(); ++ci) {
    const auto& cat = pool.categories[ci];
    const uint64_t quota = quotas[ci];
    if (quota == 0) continue;
    const uint64_t n = cat.documents.size();
    if (quota > cat.effective_size()) {
      throw Error(ErrorCode::kInsufficientSeedData,
                  std::string(polarity_name(cat.polarity)) + " category '" + cat.name + "' needs " +
                      std::to_string(quota) + " examples but has effective size " +
                      std::to_string(cat.effective_size()) + " (" + std::to_string(n) + " documents x " +
                      std::to_string(cat.resample_factor) + ")");
    }
    const int label = polarity_label(cat.polarity);
    const uint64_t full_rounds = quota / n;
    for (uint64_t r = 0; r < full_rounds; ++r) {
      for (uint64_t d = 0; d < n; ++d) {
        draws.push_back({static_cast<uint32_t>(ci), static_cast<uint32_t>(d), label});
      }
    }
    const uint64_t rest = quota % n;
    if (rest) {
      Rng rng(splitmix64(seed ^ fnv1a64(std::string(polarity_name(cat.polarity)) + "/" + cat.name)));
      std::vector<uint32_t> order(n);
      std::iota(order.begin(), order.end(), 0u);
      // Partial Fisher-Yates: the first `rest` slots are a uniform sample.
      for (uint64_t i = 0; i < rest; ++i) {
        const uint64_t j = i + rng.below(n - i);
        std::swap(order[i], order[j]);
        draws.push_back({static_cast<uint32_t>(ci), order[i], label});
      }
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<SeedDraw>(draws));
  return draws;
}

std::vector<LabeledExample> assemble_training_set(const SeedPoolManifest& pool, uint64_t target_size,
                                                  double balance, uint64_t seed) {
  const auto draws = assemble_draws(pool, target_size, balance, seed);
  std::vector<LabeledExample> out;
  out.reserve(draws.size());
  for (const auto& d : draws) out.push_back({pool.categories[d.category].documents[d.document], d.label});
  return out;
}

// ---------------------------------------------------------------- store

namespace {

std::string manifest_file_name(uint64_t version) { return std::to_string(version) + ".json"; }

}  // namespace

SeedPoolStore::SeedPoolStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "manifests");
  fs::create_directories(dir_ / "docs");
}

std::string SeedPoolStore::write_shard(const std::vector<std::string>& documents) {
  std::string body;
  for (const auto& d : documents) {
    body += nlohmann::json{{"text", d}}.dump();
    body.push_back('\n');
  }
  const std::string hash = to_hex(fnv1a64(body));
  const fs::path path = dir_ / "docs" / (hash + ".jsonl");
  if (!fs::exists(path)) write_file_atomic(path, body);
  return hash;
}

std::vector<std::string> SeedPoolStore::read_shard(const std::string& hash) const {
  const fs::path path = dir_ / "docs" / (hash + ".jsonl");
  const std::string body = read_file(path);
  if (to_hex(fnv1a64(body)) != hash) {
    throw Error(ErrorCode::kCorruptPayload, "document shard " + path.string() + " does not match its hash");
  }
  std::vector<std::string> docs;
  size_t start = 0;
  while (start < body.size()) {
    size_t end = body.find('\n', start);
    if (end == std::string::npos) end = body.size();
    docs.push_back(nlohmann::json::parse(body.substr(start, end - start)).at("text").get<std::string>());
    start = end + 1;
  }
  return docs;
}

SeedPoolManifest SeedPoolStore::commit(SeedPoolManifest manifest) {
  FileLock lock(dir_ / ".lock", /*wait=*/true);
  const auto latest = latest_version();
  if (manifest.parent_version && !fs::exists(dir_ / "manifests" / manifest_file_name(*manifest.parent_version))) {
    throw Error(ErrorCode::kInvalidArgument,
                "parent version " + std::to_string(*manifest.parent_version) + " is not in the store");
  }
  if (!manifest.parent_version && latest) {
    throw Error(ErrorCode::kInvalidArgument, "only the first manifest may lack a parent");
  }
  manifest.version = latest ? *latest + 1 : 1;
  manifest.validate();

  nlohmann::json j;
  j["version"] = manifest.version;
  j["parent_version"] = manifest.parent_version ? nlohmann::json(*manifest.parent_version) : nlohmann::json(nullptr);
  j["categories"] = nlohmann::json::array();
  for (const auto& c : manifest.categories) {
    j["categories"].push_back({{"name", c.name},
                               {"polarity", polarity_name(c.polarity)},
                               {"source", c.source},
                               {"resample_factor", c.resample_factor},
                               {"underrepresented", c.underrepresented},
                               {"documents", c.documents.size()},
                               {"shard", write_shard(c.documents)}});
  }
  write_file_atomic(dir_ / "manifests" / manifest_file_name(manifest.version), j.dump(2) + "\n");
  return manifest;
}

SeedPoolManifest SeedPoolStore::load(uint64_t version) const {
  const fs::path path = dir_ / "manifests" / manifest_file_name(version);
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "no seed pool version " + std::to_string(version));
  const auto j = nlohmann::json::parse(read_file(path));
  SeedPoolManifest m;
  m.version = j.at("version").get<uint64_t>();
  if (!j.at("parent_version").is_null()) m.parent_version = j["parent_version"].get<uint64_t>();
  for (const auto& cj : j.at("categories")) {
    SeedCategory c;
    c.name = cj.at("name").get<std::string>();
    c.polarity = polarity_from_name(cj.at("polarity").get<std::string>());
    c.source = cj.value("source", std::string());
    c.resample_factor = cj.value("resample_factor", 1);
    c.underrepresented = cj.value("underrepresented", false);
    c.documents = read_shard(cj.at("shard").get<std::string>());
    if (c.documents.size() != cj.at("documents").get<size_t>()) {
      throw Error(ErrorCode::kCorruptPayload, "document count mismatch for category '" + c.name + "'");
    }
    m.categories.push_back(std::move(c));
  }
  m.validate();
  return m;
}

std::vector<uint64_t> SeedPoolStore::versions() const {
  std::vector<uint64_t> out;
  for (const auto& entry : fs::directory_iterator(dir_ / "manifests")) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".json") continue;
    const auto stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    out.push_back(std::stoull(stem));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<uint64_t> SeedPoolStore::latest_version() const {
  const auto v = versions();
  if (v.empty()) return std::nullopt;
  return v.back();
}

nlohmann::json manifest_summary(const SeedPoolManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["parent_version"] = m.parent_version ? nlohmann::json(*m.parent_version) : nlohmann::json(nullptr);
  j["categories"] = nlohmann::json::array();
  for (const auto& c : m.categories) {
    j["categories"].push_back({{"name", c.name},
                               {"polarity", polarity_name(c.polarity)},
                               {"source", c.source},
                               {"documents", c.documents.size()},
                               {"resample_factor", c.resample_factor},
                               {"effective_size", c.effective_size()}});
  }
  return j;
}

}  // namespace ufw
