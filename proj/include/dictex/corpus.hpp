#pragma once

// Word-sense dataset ingestion: parsing line-delimited dictionary records,
// collapsing inflection duplicates, attaching corpus frequencies, and split
// statistics.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dictex::corpus {

enum class Split { kTrain, kValidation, kTest };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view name);

struct RawEntry {
  std::string surface_word;
  std::string lemma;
  std::string pos;
  std::string definition;
  std::vector<std::string> examples;
  Split split = Split::kTest;
  std::size_t line_number = 0;
};

struct WordSense {
  std::string id;
  std::string surface_word;
  std::string lemma;
  std::string pos;
  std::string definition;
  std::vector<std::string> examples;
  std::optional<std::uint64_t> frequency;

  friend bool operator==(const WordSense&, const WordSense&) = default;
};

struct SplitStats {
  std::size_t word_senses = 0;
  std::size_t unique_words = 0;
  std::size_t unique_lemmas = 0;
  double avg_examples = 0.0;
};

struct MalformedRecord {
  std::size_t line_number = 0;
  std::string reason;
};

struct ParseResult {
  std::vector<RawEntry> entries;
  std::vector<MalformedRecord> malformed;
  std::size_t lines_read = 0;
};

struct DedupResult {
  std::vector<WordSense> senses;
  // Groups whose winning inflection carried no example sentences.
  std::size_t dropped_groups = 0;
};

/// Lowercased, whitespace-trimmed POS tag.
std::string normalize_pos(std::string_view pos);

/// Deterministic identifier for a (lemma, pos, definition) triplet.
std::string sense_id(std::string_view lemma, std::string_view pos, std::string_view definition);

/// Parses one JSON record per line. Malformed lines are collected, not fatal.
ParseResult parse_dataset(std::istream& stream);

/// Throws Error(kTooManyMalformed) when more than 1% of the lines read were
/// malformed.
void check_malformed_ratio(const ParseResult& result);

/// One WordSense per (lemma, pos, definition): the inflection with the most
/// examples wins, ties going to the lexicographically smallest surface word.
/// Output is sorted by id.
DedupResult dedup_inflections(const std::vector<RawEntry>& entries);

using FrequencyTable = std::unordered_map<std::string, std::uint64_t>;

/// Reads "word<TAB>count" lines. Keys are lowercased.
FrequencyTable parse_frequency_table(std::istream& stream);

std::vector<WordSense> attach_frequencies(std::vector<WordSense> senses, const FrequencyTable& table);

/// Throws Error(kEmptySplit) on an empty input. Words and lemmas are counted
/// case-insensitively.
SplitStats split_stats(const std::vector<WordSense>& senses);

/// First example sentence, unchanged. Throws Error(kNoExamples).
const std::string& select_baseline(const WordSense& sense);

nlohmann::json to_json(const WordSense& sense);
WordSense sense_from_json(const nlohmann::json& j);

/// Line-delimited serialization, one WordSense per line in input order.
std::string serialize_senses(const std::vector<WordSense>& senses);

}  // namespace dictex::corpus
