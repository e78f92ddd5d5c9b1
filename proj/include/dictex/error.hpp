#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dictex {

enum class ErrorCode {
  kPrecondition,
  kMalformedRecord,
  kTooManyMalformed,
  kEmptySplit,
  kNoExamples,
  kWordNotInSentence,
  kTokenizationMismatch,
  kTemplate,
  kEmptyRun,
  kUnmatchedPairs,
  kEmptySentence,
  kEmptyCohort,
  kStaleUpstream,
  kMissingUpstream,
  kMismatchedInputs,
  kDuplicateSubmission,
  kUnknownPair,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Domain failure raised by the pure operations. Backend failures are values
// (see backends.hpp) and never reach this type unless a stage gives up.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dictex
