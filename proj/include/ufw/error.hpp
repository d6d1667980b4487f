#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ufw {

enum class ErrorCode {
  kInvalidUtf8,
  kInvalidArgument,
  kVocabNotFound,
  kVocabMalformed,
  kEmptyVocabulary,
  kEmptyDataset,
  kUnknownLabel,
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kCorruptPayload,
  kUnknownCategory,
  kFactorOutOfRange,
  kInsufficientSeedData,
  kNoCategories,
  kShardUnreadable,
  kMalformedRecord,
  kCorpusMismatch,
  kNonPositiveTokens,
  kInsufficientDefaultTokens,
  kCandidateEpochOverflow,
  kMissingMetric,
  kStateCorrupt,
  kJournalUnreadable,
  kInvalidTransition,
  kLocked,
  kUnknownCommand,
};

std::string_view error_code_name(ErrorCode code);

// All toolkit failures are reported as ufw::Error. The code identifies the
// failure class; the message carries the detail (position, name, line).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code),
        detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace ufw
