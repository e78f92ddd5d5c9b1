#include "dictex/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "dictex/digest.hpp"
#include "dictex/error.hpp"
#include "dictex/io.hpp"

namespace dictex::corpus {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "test";
}

std::optional<Split> parse_split(std::string_view name) {
  const auto lower = to_lower(trim(name));
  if (lower == "train") return Split::kTrain;
  if (lower == "validation" || lower == "valid" || lower == "dev") return Split::kValidation;
  if (lower == "test") return Split::kTest;
  return std::nullopt;
}

std::string normalize_pos(std::string_view pos) { return to_lower(trim(pos)); }

std::string sense_id(std::string_view lemma, std::string_view pos, std::string_view definition) {
  std::string key;
  key.append(trim(lemma));
  key.push_back('\x1f');
  key.append(normalize_pos(pos));
  key.push_back('\x1f');
  key.append(trim(definition));
  return sha256_hex(key).substr(0, 16);
}

namespace {

std::string required_text(const json& record, const char* field) {
  auto it = record.find(field);
  if (it == record.end() || !it->is_string()) {
    throw std::invalid_argument(std::string("missing string field '") + field + "'");
  }
  auto value = std::string(trim(it->get_ref<const std::string&>()));
  if (value.empty()) throw std::invalid_argument(std::string("empty field '") + field + "'");
  return value;
}

RawEntry parse_record(const std::string& line) {
  const auto record = json::parse(line);
  if (!record.is_object()) throw std::invalid_argument("record is not an object");

  RawEntry entry;
  entry.surface_word = required_text(record, "word");
  entry.lemma = required_text(record, "lemma");
  entry.definition = required_text(record, "definition");
  auto pos = record.find("pos");
  if (pos == record.end() || !pos->is_string()) throw std::invalid_argument("missing string field 'pos'");
  entry.pos = pos->get<std::string>();

  auto split = record.find("split");
  if (split == record.end() || !split->is_string()) throw std::invalid_argument("missing string field 'split'");
  auto parsed = parse_split(split->get_ref<const std::string&>());
  if (!parsed) throw std::invalid_argument("unknown split '" + split->get<std::string>() + "'");
  entry.split = *parsed;

  auto examples = record.find("examples");
  if (examples == record.end() || !examples->is_array()) throw std::invalid_argument("'examples' is not an array");
  for (const auto& ex : *examples) {
    if (!ex.is_string()) throw std::invalid_argument("non-string example");
    auto text = trim(ex.get_ref<const std::string&>());
    if (!text.empty()) entry.examples.emplace_back(text);
  }
  return entry;
}

}  // namespace

ParseResult parse_dataset(std::istream& stream) {
  ParseResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(stream, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    ++result.lines_read;
    try {
      auto entry = parse_record(line);
      entry.line_number = line_number;
      result.entries.push_back(std::move(entry));
    } catch (const std::exception& e) {
      result.malformed.push_back({line_number, e.what()});
    }
  }
  return result;
}

void check_malformed_ratio(const ParseResult& result) {
  if (result.malformed.size() * 100 > result.lines_read) {
    throw Error(ErrorCode::kTooManyMalformed, std::to_string(result.malformed.size()) + " of " +
                                                  std::to_string(result.lines_read) + " lines malformed (first at line " +
                                                  std::to_string(result.malformed.front().line_number) + ": " +
                                                  result.malformed.front().reason + ")");
  }
}

DedupResult dedup_inflections(const std::vector<RawEntry>& entries) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, const RawEntry*> best;
  for (const auto& e : entries) {
    Key key{std::string(trim(e.lemma)), normalize_pos(e.pos), std::string(trim(e.definition))};
    auto [it, inserted] = best.try_emplace(key, &e);
    if (inserted) continue;
    const RawEntry* current = it->second;
    if (e.examples.size() > current->examples.size() ||
        (e.examples.size() == current->examples.size() && e.surface_word < current->surface_word)) {
      it->second = &e;
    }
  }

  DedupResult result;
  for (const auto& [key, entry] : best) {
    if (entry->examples.empty()) {
      ++result.dropped_groups;
      continue;
    }
    WordSense sense;
    sense.lemma = std::get<0>(key);
    sense.pos = std::get<1>(key);
    sense.definition = std::get<2>(key);
    sense.id = sense_id(sense.lemma, sense.pos, sense.definition);
    sense.surface_word = std::string(trim(entry->surface_word));
    sense.examples = entry->examples;
    result.senses.push_back(std::move(sense));
  }
  std::sort(result.senses.begin(), result.senses.end(),
            [](const WordSense& a, const WordSense& b) { return a.id < b.id; });
  return result;
}

FrequencyTable parse_frequency_table(std::istream& stream) {
  FrequencyTable table;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(stream, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::kMalformedRecord, "frequency table line " + std::to_string(line_number) + ": no tab");
    }
    auto word = to_lower(trim(std::string_view(line).substr(0, tab)));
    auto count_text = std::string(trim(std::string_view(line).substr(tab + 1)));
    try {
      std::size_t used = 0;
      auto count = std::stoull(count_text, &used);
      if (used != count_text.size() || count_text.front() == '-') throw std::invalid_argument("trailing");
      table[word] = count;
    } catch (const std::exception&) {
      throw Error(ErrorCode::kMalformedRecord,
                  "frequency table line " + std::to_string(line_number) + ": bad count '" + count_text + "'");
    }
  }
  return table;
}

std::vector<WordSense> attach_frequencies(std::vector<WordSense> senses, const FrequencyTable& table) {
  for (auto& s : senses) {
    auto it = table.find(to_lower(s.surface_word));
    if (it != table.end()) {
      s.frequency = it->second;
    } else {
      s.frequency.reset();
    }
  }
  return senses;
}

SplitStats split_stats(const std::vector<WordSense>& senses) {
  if (senses.empty()) throw Error(ErrorCode::kEmptySplit, "no word senses");
  std::set<std::string> words;
  std::set<std::string> lemmas;
  std::size_t examples = 0;
  for (const auto& s : senses) {
    words.insert(to_lower(s.surface_word));
    lemmas.insert(to_lower(s.lemma));
    examples += s.examples.size();
  }
  return SplitStats{
      .word_senses = senses.size(),
      .unique_words = words.size(),
      .unique_lemmas = lemmas.size(),
      .avg_examples = static_cast<double>(examples) / static_cast<double>(senses.size()),
  };
}

const std::string& select_baseline(const WordSense& sense) {
  if (sense.examples.empty()) throw Error(ErrorCode::kNoExamples, "sense " + sense.id + " has no examples");
  return sense.examples.front();
}

json to_json(const WordSense& sense) {
  json j{{"id", sense.id},           {"word", sense.surface_word},  {"lemma", sense.lemma},
         {"pos", sense.pos},         {"definition", sense.definition}, {"examples", sense.examples}};
  if (sense.frequency) j["frequency"] = *sense.frequency;
  return j;
}

WordSense sense_from_json(const json& j) {
  WordSense s;
  s.id = j.at("id").get<std::string>();
  s.surface_word = j.at("word").get<std::string>();
  s.lemma = j.at("lemma").get<std::string>();
  s.pos = j.at("pos").get<std::string>();
  s.definition = j.at("definition").get<std::string>();
  s.examples = j.at("examples").get<std::vector<std::string>>();
  if (auto it = j.find("frequency"); it != j.end() && !it->is_null()) s.frequency = it->get<std::uint64_t>();
  return s;
}

std::string serialize_senses(const std::vector<WordSense>& senses) {
  std::vector<json> records;
  records.reserve(senses.size());
  for (const auto& s : senses) records.push_back(to_json(s));
  return to_jsonl(records);
}

}  // namespace dictex::corpus
