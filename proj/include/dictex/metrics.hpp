#pragma once

// Length and readability metrics for example sentences.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"
#include "dictex/corpus.hpp"
#include "dictex/oxfordeval.hpp"

namespace dictex::metrics {

inline constexpr double kFkglWordsWeight = 0.39;
inline constexpr double kFkglSyllableWeight = 11.8;
inline constexpr double kFkglOffset = 15.59;

struct SentenceMetrics {
  std::size_t word_count = 0;
  std::size_t syllable_count = 0;
  double fkgl = 0.0;
};

struct CohortSummary {
  std::size_t n = 0;
  std::size_t excluded_empty = 0;
  double words_avg = 0.0;
  double words_sd = 0.0;
  double fkgl_avg = 0.0;
  double fkgl_sd = 0.0;
};

std::size_t word_count(std::string_view sentence);

/// Vowel groups (a, e, i, o, u, y), less a trailing silent 'e', at least 1.
std::size_t syllable_count(std::string_view word);

/// Throws Error(kEmptySentence) when the sentence has no words.
SentenceMetrics sentence_metrics(std::string_view sentence);

/// Grade level treating the input as a single sentence.
double fkgl(std::string_view sentence);

/// Population standard deviations. Empty sentences are excluded and counted;
/// throws Error(kEmptyCohort) when nothing remains.
CohortSummary summarize(const std::vector<std::string>& sentences);

struct SubgroupReport {
  std::string name;
  std::size_t n = 0;
  std::optional<oxfordeval::WinRateSummary> win_rate;
  std::optional<CohortSummary> cohort;
};

/// Splits evaluated senses into monosemous / polysemous (senses sharing
/// lemma+pos), and when a tokenizer is given, single-token / multi-token
/// surface words.
std::map<std::string, SubgroupReport> subgroup_split(const std::vector<corpus::WordSense>& senses,
                                                     const std::vector<oxfordeval::EvalRecord>& records,
                                                     backends::MlmBackend* tokenizer);

nlohmann::json to_json(const CohortSummary& summary);
nlohmann::json to_json(const SubgroupReport& report);

}  // namespace dictex::metrics
