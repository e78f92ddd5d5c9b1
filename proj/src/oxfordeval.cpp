#include "dictex/oxfordeval.hpp"

#include <algorithm>

#include "dictex/error.hpp"
#include "dictex/hashing.hpp"
#include "dictex/io.hpp"

namespace dictex::oxfordeval {

using nlohmann::json;

namespace {

constexpr std::string_view kBuiltinTemplate =
    R"(Select the output (a) or (b) that best matches the given instruction. Choose your preferred output, which can be subjective. Your answer should ONLY contain: Output (a) or Output (b). Here's an example:

Example Task:
Instruction: Give a description of the following job: "ophthalmologist"

## Output (a): An ophthalmologist is a medical doctor who specializes in the diagnosis and treatment of eye diseases and conditions.
## Output (b): An ophthalmologist is a medical doctor who pokes and prods at your eyes while asking you to read letters from a chart.

## Which is best, Output (a) or Output (b)?
Answer: Output (a)
Explanation: Here the answer is Output (a) because it provides a comprehensive and accurate description of the job of an ophthalmologist. In contrast, output (b) is more of a joke.

Now is the real task, do not explain your answer, just say Output (a) or Output (b).

Actual Task:
Instruction:
Construct a sentence with the word {word}.
The sentence must illustrate the definition of the word given here: {definition}. The part-of-speech of the word within the context of the sentence should be a {POS}.

## Output (a): {output_a}
## Output (b): {output_b}

## Which is best, Output (a) or Output (b)?
)";

constexpr std::string_view kPlaceholders[] = {"{word}", "{definition}", "{POS}", "{output_a}", "{output_b}"};

}  // namespace

EvalTemplate::EvalTemplate(std::string text) : text_(std::move(text)) {
  for (auto p : kPlaceholders) {
    if (text_.find(p) == std::string::npos) {
      throw Error(ErrorCode::kTemplate, "evaluation template lacks " + std::string(p));
    }
  }
}

EvalTemplate EvalTemplate::builtin() { return EvalTemplate(std::string(kBuiltinTemplate)); }

EvalTemplate EvalTemplate::from_file(const std::string& path) { return EvalTemplate(read_file(path)); }

std::string EvalTemplate::render(const corpus::WordSense& sense, std::string_view output_a,
                                 std::string_view output_b) const {
  if (output_a.empty() || output_b.empty()) throw Error(ErrorCode::kPrecondition, "judge outputs must be non-empty");
  return render_placeholders(text_, {{"word", sense.surface_word},
                                     {"definition", sense.definition},
                                     {"POS", sense.pos},
                                     {"output_a", std::string(output_a)},
                                     {"output_b", std::string(output_b)}});
}

std::string build_eval_prompt(const corpus::WordSense& sense, std::string_view output_a, std::string_view output_b) {
  static const EvalTemplate kTemplate = EvalTemplate::builtin();
  return kTemplate.render(sense, output_a, output_b);
}

bool PresentationRng::flipped(std::size_t pair_index) const {
  return (splitmix64(splitmix64(seed_) ^ splitmix64(static_cast<std::uint64_t>(pair_index))) >> 63) != 0;
}

bool assign_presentation(std::size_t pair_index, const PresentationRng& rng) { return rng.flipped(pair_index); }

Verdict parse_verdict(std::string_view raw) {
  const auto lower = to_lower(raw);
  const bool a = lower.find("output (a)") != std::string::npos;
  const bool b = lower.find("output (b)") != std::string::npos;
  if (a == b) return Verdict::kInvalid;
  return a ? Verdict::kPrefersA : Verdict::kPrefersB;
}

std::optional<Label> unflip(Verdict verdict, bool flipped) {
  if (verdict == Verdict::kInvalid) return std::nullopt;
  // Unflipped: baseline in (a), candidate in (b).
  const bool candidate_slot_won = (verdict == Verdict::kPrefersB) != flipped;
  return candidate_slot_won ? Label::kCandidate : Label::kBaseline;
}

Verdict flip(Label label, bool flipped) {
  const bool candidate_won = label == Label::kCandidate;
  return (candidate_won != flipped) ? Verdict::kPrefersB : Verdict::kPrefersA;
}

EvalRecord evaluate_pair(std::size_t pair_index, const corpus::WordSense& sense, std::string_view candidate,
                         std::string_view baseline, backends::ChatBackend& judge, const PresentationRng& rng,
                         const JudgeOptions& options, const EvalTemplate& tmpl, const Sleeper& sleep) {
  if (baseline.empty()) throw Error(ErrorCode::kPrecondition, "baseline sentence for " + sense.id + " is empty");
  EvalRecord rec;
  rec.pair_index = pair_index;
  rec.word_sense_id = sense.id;
  rec.candidate = std::string(candidate);
  rec.baseline = std::string(baseline);
  rec.judge_id = judge.identifier();
  rec.flipped = assign_presentation(pair_index, rng);

  if (candidate.empty()) {
    rec.raw_verdict = std::string(kImputedLoss);
    rec.label = Label::kBaseline;
    return rec;
  }

  const auto prompt = rec.flipped ? tmpl.render(sense, candidate, baseline) : tmpl.render(sense, baseline, candidate);
  for (std::size_t attempt = 0; attempt <= options.invalid_retries; ++attempt) {
    std::size_t transport_retries = 0;
    auto res = with_backoff([&] { return judge.complete(prompt, options.params); }, options.backoff, sleep,
                            transport_retries);
    rec.requests += 1 + transport_retries;
    if (!res) {
      const auto& err = res.error();
      rec.diagnostic = "judge " + std::string(backends::to_string(err.kind)) + ": " + err.message;
      if (err.kind == backends::BackendErrorKind::kRefusal) continue;
      rec.label.reset();
      return rec;
    }
    rec.raw_verdict = res.value();
    rec.label = unflip(parse_verdict(rec.raw_verdict), rec.flipped);
    if (rec.label) {
      rec.diagnostic.clear();
      return rec;
    }
    rec.diagnostic = "unparseable verdict";
  }
  rec.diagnostic += " after " + std::to_string(rec.requests) + " requests";
  return rec;
}

WinRateSummary win_rate(const std::vector<EvalRecord>& records) {
  WinRateSummary s;
  for (const auto& r : records) {
    if (!r.label) {
      ++s.invalids;
    } else if (*r.label == Label::kCandidate) {
      ++s.wins;
    } else if (r.imputed()) {
      ++s.imputed_losses;
    } else {
      ++s.losses;
    }
  }
  const auto denominator = s.wins + s.losses + s.imputed_losses;
  if (denominator == 0) throw Error(ErrorCode::kEmptyRun, "no valid judgments among " + std::to_string(records.size()));
  s.win_rate = static_cast<double>(s.wins) / static_cast<double>(denominator);
  return s;
}

double agreement_rate(const std::vector<EvalRecord>& judge_records, const std::map<std::string, Label>& human_labels) {
  if (human_labels.empty()) throw Error(ErrorCode::kEmptyRun, "no human labels");
  std::map<std::string, std::optional<Label>> judged;
  for (const auto& r : judge_records) judged[r.word_sense_id] = r.label;

  std::size_t agree = 0;
  std::vector<std::string> unmatched;
  for (const auto& [pair_id, human] : human_labels) {
    auto it = judged.find(pair_id);
    if (it == judged.end()) {
      unmatched.push_back(pair_id);
      continue;
    }
    if (it->second && *it->second == human) ++agree;
  }
  if (!unmatched.empty()) {
    throw Error(ErrorCode::kUnmatchedPairs,
                std::to_string(unmatched.size()) + " human pairs lack a judge record, e.g. " + unmatched.front());
  }
  return static_cast<double>(agree) / static_cast<double>(human_labels.size());
}

json to_json(const EvalRecord& r) {
  json j{{"pair_index", r.pair_index}, {"word_sense_id", r.word_sense_id}, {"candidate", r.candidate},
         {"baseline", r.baseline},     {"flipped", r.flipped},             {"raw_verdict", r.raw_verdict},
         {"judge_id", r.judge_id},     {"requests", r.requests}};
  j["label"] = r.label ? json(static_cast<int>(*r.label)) : json(nullptr);
  if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r;
  r.pair_index = j.value("pair_index", std::size_t{0});
  r.word_sense_id = j.at("word_sense_id").get<std::string>();
  r.candidate = j.at("candidate").get<std::string>();
  r.baseline = j.at("baseline").get<std::string>();
  r.flipped = j.at("flipped").get<bool>();
  r.raw_verdict = j.at("raw_verdict").get<std::string>();
  r.judge_id = j.value("judge_id", "");
  r.requests = j.value("requests", std::size_t{0});
  r.diagnostic = j.value("diagnostic", "");
  if (const auto& label = j.at("label"); !label.is_null()) {
    const int v = label.get<int>();
    if (v != 0 && v != 1) throw Error(ErrorCode::kMalformedRecord, "label must be 0, 1 or null");
    r.label = static_cast<Label>(v);
  }
  return r;
}

json to_json(const WinRateSummary& s) {
  return json{{"wins", s.wins},
              {"losses", s.losses},
              {"invalids", s.invalids},
              {"imputed_losses", s.imputed_losses},
              {"total", s.total()},
              {"win_rate", s.win_rate}};
}

}  // namespace dictex::oxfordeval
