#include "dictex/exemplify.hpp"

#include <cctype>
#include <cmath>

#include "dictex/error.hpp"

namespace dictex::exemplify {

using backends::MaskQuery;
using nlohmann::json;

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c == '\'' || c >= 0x80; }

namespace {

bool iequal_at(std::string_view text, std::size_t at, std::string_view word) {
  for (std::size_t k = 0; k < word.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(text[at + k])) != std::tolower(static_cast<unsigned char>(word[k]))) {
      return false;
    }
  }
  return true;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

[[noreturn]] void mismatch(const std::string& why) { throw Error(ErrorCode::kTokenizationMismatch, why); }

std::string describe(const backends::BackendError& err) {
  return "mlm backend " + std::string(backends::to_string(err.kind)) + ": " + err.message;
}

}  // namespace

std::vector<OccurrenceSpan> locate_target(std::string_view sentence, std::string_view surface_word) {
  if (surface_word.empty()) throw Error(ErrorCode::kPrecondition, "surface word is empty");
  std::vector<OccurrenceSpan> spans;
  const auto n = surface_word.size();
  for (std::size_t i = 0; i + n <= sentence.size();) {
    const bool left_ok = i == 0 || !is_word_byte(static_cast<unsigned char>(sentence[i - 1]));
    const bool right_ok = i + n == sentence.size() || !is_word_byte(static_cast<unsigned char>(sentence[i + n]));
    if (left_ok && right_ok && iequal_at(sentence, i, surface_word)) {
      spans.push_back({i, i + n, std::string(sentence.substr(i, n))});
      i += n;
    } else {
      ++i;
    }
  }
  if (spans.empty()) {
    throw Error(ErrorCode::kWordNotInSentence,
                "'" + std::string(surface_word) + "' not found in '" + std::string(sentence) + "'");
  }
  return spans;
}

MaskQuery build_mask_query(std::string_view sentence, const std::vector<OccurrenceSpan>& spans,
                           backends::MlmBackend& backend) {
  if (spans.empty()) throw Error(ErrorCode::kPrecondition, "no spans to mask");
  MaskQuery query;
  const auto mask_id = backend.mask_token_id();

  // Tokenizes sentence[begin, end) with surrounding whitespace stripped and
  // appends the ids; returns how many were appended.
  auto splice = [&](std::size_t begin, std::size_t end, bool must_produce) -> std::size_t {
    while (begin < end && is_space(sentence[begin])) ++begin;
    while (end > begin && is_space(sentence[end - 1])) --end;
    if (begin == end) {
      if (must_produce) mismatch("empty target span");
      return 0;
    }
    const auto fragment = sentence.substr(begin, end - begin);
    const bool leading_space = begin > 0 && is_space(sentence[begin - 1]);
    auto tokens = backend.tokenize(fragment, leading_space);
    if (!tokens) throw Error(ErrorCode::kIo, describe(tokens.error()));
    const auto& t = tokens.value();
    if (t.token_ids.size() != t.offsets.size()) mismatch("token and offset counts differ");
    std::size_t last_end = 0;
    for (const auto& [s, e] : t.offsets) {
      if (s > e || e > fragment.size() || s < last_end) {
        mismatch("offsets for '" + std::string(fragment) + "' do not fit the fragment");
      }
      last_end = e;
    }
    if (must_produce && t.token_ids.empty()) mismatch("target '" + std::string(fragment) + "' produced no tokens");
    query.token_ids.insert(query.token_ids.end(), t.token_ids.begin(), t.token_ids.end());
    return t.token_ids.size();
  };

  std::size_t cursor = 0;
  for (const auto& span : spans) {
    if (span.start < cursor || span.end > sentence.size() || span.start >= span.end) {
      throw Error(ErrorCode::kPrecondition, "spans overlap or fall outside the sentence");
    }
    splice(cursor, span.start, false);
    const auto first = query.token_ids.size();
    const auto count = splice(span.start, span.end, true);
    for (std::size_t k = first; k < first + count; ++k) {
      query.mask_positions.push_back(k);
      query.target_ids.push_back(query.token_ids[k]);
      query.token_ids[k] = mask_id;
    }
    cursor = span.end;
  }
  splice(cursor, sentence.size(), false);

  if (query.token_ids.size() > backend.max_sequence_length()) {
    mismatch("sequence of " + std::to_string(query.token_ids.size()) + " tokens exceeds model length " +
             std::to_string(backend.max_sequence_length()));
  }
  return query;
}

ExemplificationResult exemplification_score(std::string_view sentence, std::string_view surface_word,
                                            backends::MlmBackend& backend) {
  ExemplificationResult result;
  result.sentence = std::string(sentence);
  result.spans = locate_target(sentence, surface_word);
  const auto query = build_mask_query(sentence, result.spans, backend);
  auto scores = backend.mask_score(query);
  if (!scores) throw Error(ErrorCode::kIo, describe(scores.error()));
  if (scores->logprobs.size() != query.mask_positions.size()) {
    throw Error(ErrorCode::kIo, "mlm backend returned " + std::to_string(scores->logprobs.size()) + " scores for " +
                                    std::to_string(query.mask_positions.size()) + " masks");
  }
  result.mask_count = query.mask_positions.size();
  result.per_position_logprob = scores->logprobs;
  double sum = 0.0;
  for (double lp : result.per_position_logprob) sum += lp;
  result.log_score = sum;
  result.score = std::exp(sum);
  return result;
}

Selection select_best(const genpipe::CandidateSet& set, const corpus::WordSense& sense,
                      backends::MlmBackend& backend) {
  Selection sel;
  sel.word_sense_id = set.word_sense_id;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    CandidateScore cs;
    cs.candidate_index = i;
    const auto& text = set.candidates[i];
    if (text.empty()) {
      cs.diagnostic = "empty candidate";
    } else {
      try {
        cs.result = exemplification_score(text, sense.surface_word, backend);
        cs.scored = true;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kWordNotInSentence && e.code() != ErrorCode::kTokenizationMismatch) throw;
        cs.diagnostic = e.what();
      }
    }
    if (cs.scored && (!best || cs.result.log_score > sel.scores[*best].result.log_score)) best = i;
    sel.scores.push_back(std::move(cs));
  }

  if (best) {
    sel.chosen_index = *best;
  } else {
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
      if (!set.candidates[i].empty()) {
        best = i;
        break;
      }
    }
    if (best) {
      sel.chosen_index = *best;
      sel.diagnostic = "no candidate could be scored; fell back to the first non-empty one";
    } else {
      sel.diagnostic = "no non-empty candidate";
    }
  }
  if (best) sel.chosen = set.candidates[*best];
  return sel;
}

Selection select_first(const genpipe::CandidateSet& set) {
  Selection sel;
  sel.word_sense_id = set.word_sense_id;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    CandidateScore cs;
    cs.candidate_index = i;
    cs.diagnostic = "not scored";
    sel.scores.push_back(cs);
  }
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    if (!set.candidates[i].empty()) {
      sel.chosen_index = i;
      sel.chosen = set.candidates[i];
      return sel;
    }
  }
  sel.diagnostic = "no non-empty candidate";
  return sel;
}

std::vector<json> score_records(const Selection& selection) {
  std::vector<json> out;
  for (const auto& cs : selection.scores) {
    json j{{"word_sense_id", selection.word_sense_id},
           {"candidate_index", cs.candidate_index},
           {"chosen", !selection.chosen.empty() && cs.candidate_index == selection.chosen_index}};
    if (cs.scored) {
      j["score"] = cs.result.score;
      j["log_score"] = cs.result.log_score;
      j["mask_count"] = cs.result.mask_count;
    } else {
      j["score"] = nullptr;
      j["mask_count"] = 0;
      j["diagnostic"] = cs.diagnostic;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace dictex::exemplify
