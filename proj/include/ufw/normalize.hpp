#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

namespace ufw {

struct NormalizePolicy {
  bool lowercase = true;
  bool strip_diacritics = true;
  bool collapse_spaces = true;
  int max_consecutive_newlines = 2;

  bool operator==(const NormalizePolicy&) const = default;

  // Throws Error(kInvalidArgument) when max_consecutive_newlines < 1.
  void validate() const;
};

NormalizePolicy policy_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const NormalizePolicy& policy);

// Preprocessing applied identically before training and scoring:
//   * full Unicode lowercase mapping,
//   * NFD decomposition with every nonspacing mark (Mn) removed,
//   * runs of U+0020 collapsed to one space,
//   * runs of '\n' capped at max_consecutive_newlines.
// Tabs, carriage returns and all other whitespace pass through untouched.
// The result is a fixed point: normalize_text(normalize_text(x)) == normalize_text(x).
//
// Throws Error(kInvalidUtf8) with the byte offset of the first bad sequence.
std::string normalize_text(std::string_view raw, const NormalizePolicy& policy = {});

}  // namespace ufw
