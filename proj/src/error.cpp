#include "dictex/error.hpp"

namespace dictex {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPrecondition: return "Precondition";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kTooManyMalformed: return "TooManyMalformed";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kNoExamples: return "NoExamples";
    case ErrorCode::kWordNotInSentence: return "WordNotInSentence";
    case ErrorCode::kTokenizationMismatch: return "TokenizationMismatch";
    case ErrorCode::kTemplate: return "TemplateError";
    case ErrorCode::kEmptyRun: return "EmptyRun";
    case ErrorCode::kUnmatchedPairs: return "UnmatchedPairs";
    case ErrorCode::kEmptySentence: return "EmptySentence";
    case ErrorCode::kEmptyCohort: return "EmptyCohort";
    case ErrorCode::kStaleUpstream: return "StaleUpstream";
    case ErrorCode::kMissingUpstream: return "MissingUpstream";
    case ErrorCode::kMismatchedInputs: return "MismatchedInputs";
    case ErrorCode::kDuplicateSubmission: return "DuplicateSubmission";
    case ErrorCode::kUnknownPair: return "UnknownPair";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace dictex
