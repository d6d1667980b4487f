#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ufw {

constexpr uint32_t kFnv32Offset = 2166136261u;
constexpr uint32_t kFnv32Prime = 16777619u;
constexpr uint64_t kFnv64Offset = 14695981039346656037ull;
constexpr uint64_t kFnv64Prime = 1099511628211ull;

constexpr uint32_t fnv1a32(std::string_view bytes) noexcept {
  uint32_t h = kFnv32Offset;
  for (char c : bytes) {
    h ^= static_cast<uint8_t>(c);
    h *= kFnv32Prime;
  }
  return h;
}

// Incremental FNV-1a 64; used for file checksums and fingerprints.
class Fnv64 {
 public:
  void update(std::string_view bytes) noexcept {
    for (char c : bytes) {
      h_ ^= static_cast<uint8_t>(c);
      h_ *= kFnv64Prime;
    }
  }
  void update(const void* data, size_t n) noexcept {
    update(std::string_view(static_cast<const char*>(data), n));
  }
  uint64_t digest() const noexcept { return h_; }

 private:
  uint64_t h_ = kFnv64Offset;
};

inline uint64_t fnv1a64(std::string_view bytes) noexcept {
  Fnv64 h;
  h.update(bytes);
  return h.digest();
}

constexpr uint64_t splitmix64(uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// 16 lowercase hex digits.
std::string to_hex(uint64_t v);
uint64_t from_hex(std::string_view s);

}  // namespace ufw
