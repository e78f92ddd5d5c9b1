#pragma once

// Mask-and-reconstruct exemplification scoring. Every occurrence of the target
// word is masked at once and the masked LM's probability of restoring the
// original tokens is the score: a sentence that pins down the word's meaning
// makes the word easy to recover.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"
#include "dictex/corpus.hpp"
#include "dictex/genpipe.hpp"

namespace dictex::exemplify {

struct OccurrenceSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string matched_text;

  friend bool operator==(const OccurrenceSpan&, const OccurrenceSpan&) = default;
};

struct ExemplificationResult {
  std::string sentence;
  std::vector<OccurrenceSpan> spans;
  std::size_t mask_count = 0;
  std::vector<double> per_position_logprob;
  double log_score = 0.0;  // sum of per_position_logprob
  double score = 1.0;      // exp(log_score)
};

/// Letters, digits, apostrophes and any non-ASCII byte count as word characters.
bool is_word_byte(unsigned char c);

/// Case-insensitive whole-word occurrences, left to right. Throws
/// Error(kWordNotInSentence) when there are none.
std::vector<OccurrenceSpan> locate_target(std::string_view sentence, std::string_view surface_word);

/// Tokenizes the sentence as a splice of plain segments and target spans, then
/// replaces every target token with the mask id. Throws
/// Error(kTokenizationMismatch) when backend offsets do not fit the segments
/// or the sequence exceeds the model's length.
backends::MaskQuery build_mask_query(std::string_view sentence, const std::vector<OccurrenceSpan>& spans,
                                     backends::MlmBackend& backend);

/// Throws Error(kWordNotInSentence), Error(kTokenizationMismatch), or
/// Error(kIo) when the backend fails.
ExemplificationResult exemplification_score(std::string_view sentence, std::string_view surface_word,
                                            backends::MlmBackend& backend);

struct CandidateScore {
  std::size_t candidate_index = 0;
  bool scored = false;
  ExemplificationResult result;
  std::string diagnostic;
};

struct Selection {
  std::string word_sense_id;
  std::size_t chosen_index = 0;
  std::string chosen;
  std::vector<CandidateScore> scores;  // one per candidate, in candidate order
  std::string diagnostic;
};

/// Highest log-score among non-empty candidates containing the word; ties go to
/// the earliest. Falls back to the first non-empty candidate, then to "".
Selection select_best(const genpipe::CandidateSet& set, const corpus::WordSense& sense,
                      backends::MlmBackend& backend);

/// First non-empty candidate, without scoring.
Selection select_first(const genpipe::CandidateSet& set);

std::vector<nlohmann::json> score_records(const Selection& selection);

}  // namespace dictex::exemplify
