#include "dictex/metrics.hpp"

#include <cctype>
#include <cmath>
#include <tuple>

#include "dictex/error.hpp"

namespace dictex::metrics {

using nlohmann::json;

namespace {

bool is_vowel(char c) {
  switch (c) {
    case 'a': case 'e': case 'i': case 'o': case 'u': case 'y': return true;
    default: return false;
  }
}

template <typename F>
void for_each_word(std::string_view s, F&& fn) {
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const auto start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) fn(s.substr(start, i - start));
  }
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

}  // namespace

std::size_t word_count(std::string_view sentence) {
  std::size_t n = 0;
  for_each_word(sentence, [&](std::string_view) { ++n; });
  return n;
}

std::size_t syllable_count(std::string_view word) {
  std::string letters;
  for (unsigned char c : word) {
    if (std::isalpha(c)) letters.push_back(static_cast<char>(std::tolower(c)));
  }
  std::size_t groups = 0;
  bool in_group = false;
  for (char c : letters) {
    const bool v = is_vowel(c);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  // Silent final 'e': the last vowel group is a lone trailing 'e'.
  const auto n = letters.size();
  if (groups > 1 && n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2])) --groups;
  return std::max<std::size_t>(groups, 1);
}

SentenceMetrics sentence_metrics(std::string_view sentence) {
  SentenceMetrics m;
  for_each_word(sentence, [&](std::string_view w) {
    ++m.word_count;
    m.syllable_count += syllable_count(w);
  });
  if (m.word_count == 0) throw Error(ErrorCode::kEmptySentence, "sentence has no words");
  const auto words = static_cast<double>(m.word_count);
  m.fkgl = kFkglWordsWeight * words + kFkglSyllableWeight * (static_cast<double>(m.syllable_count) / words) -
           kFkglOffset;
  return m;
}

double fkgl(std::string_view sentence) { return sentence_metrics(sentence).fkgl; }

CohortSummary summarize(const std::vector<std::string>& sentences) {
  CohortSummary s;
  std::vector<double> words;
  std::vector<double> grades;
  for (const auto& sentence : sentences) {
    if (word_count(sentence) == 0) {
      ++s.excluded_empty;
      continue;
    }
    const auto m = sentence_metrics(sentence);
    words.push_back(static_cast<double>(m.word_count));
    grades.push_back(m.fkgl);
  }
  if (words.empty()) throw Error(ErrorCode::kEmptyCohort, "no non-empty sentences");
  s.n = words.size();
  const auto w = moments(words);
  const auto g = moments(grades);
  s.words_avg = w.mean;
  s.words_sd = w.sd;
  s.fkgl_avg = g.mean;
  s.fkgl_sd = g.sd;
  return s;
}

std::map<std::string, SubgroupReport> subgroup_split(const std::vector<corpus::WordSense>& senses,
                                                     const std::vector<oxfordeval::EvalRecord>& records,
                                                     backends::MlmBackend* tokenizer) {
  std::map<std::tuple<std::string, std::string>, std::size_t> sense_counts;
  std::map<std::string, const corpus::WordSense*> by_id;
  for (const auto& s : senses) {
    ++sense_counts[{s.lemma, s.pos}];
    by_id[s.id] = &s;
  }

  std::map<std::string, std::vector<const oxfordeval::EvalRecord*>> groups;
  groups["monosemous"];
  groups["polysemous"];
  if (tokenizer) {
    groups["single_token"];
    groups["multi_token"];
  }
  std::map<std::string, bool> single_token_cache;
  for (const auto& r : records) {
    auto it = by_id.find(r.word_sense_id);
    if (it == by_id.end()) continue;
    const auto& sense = *it->second;
    groups[sense_counts[{sense.lemma, sense.pos}] > 1 ? "polysemous" : "monosemous"].push_back(&r);
    if (tokenizer) {
      auto cached = single_token_cache.find(sense.surface_word);
      if (cached == single_token_cache.end()) {
        auto tokens = tokenizer->tokenize(sense.surface_word, true);
        if (!tokens) throw Error(ErrorCode::kIo, "tokenizer failed: " + tokens.error().message);
        cached = single_token_cache.emplace(sense.surface_word, tokens->token_ids.size() == 1).first;
      }
      groups[cached->second ? "single_token" : "multi_token"].push_back(&r);
    }
  }

  std::map<std::string, SubgroupReport> out;
  for (const auto& [name, members] : groups) {
    SubgroupReport rep;
    rep.name = name;
    rep.n = members.size();
    std::vector<oxfordeval::EvalRecord> rs;
    std::vector<std::string> sentences;
    for (const auto* r : members) {
      rs.push_back(*r);
      sentences.push_back(r->candidate);
    }
    try {
      rep.win_rate = oxfordeval::win_rate(rs);
    } catch (const Error&) {
    }
    try {
      rep.cohort = summarize(sentences);
    } catch (const Error&) {
    }
    out.emplace(name, std::move(rep));
  }
  return out;
}

json to_json(const CohortSummary& s) {
  return json{{"n", s.n},           {"excluded_empty", s.excluded_empty}, {"words_avg", s.words_avg},
              {"words_sd", s.words_sd}, {"fkgl_avg", s.fkgl_avg},         {"fkgl_sd", s.fkgl_sd}};
}

json to_json(const SubgroupReport& r) {
  json j{{"name", r.name}, {"n", r.n}};
  j["win_rate"] = r.win_rate ? oxfordeval::to_json(*r.win_rate) : json(nullptr);
  j["cohort"] = r.cohort ? to_json(*r.cohort) : json(nullptr);
  return j;
}

}  // namespace dictex::metrics
