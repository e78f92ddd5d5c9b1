#include "dictex/genpipe.hpp"

#include <cctype>

#include "dictex/error.hpp"
#include "dictex/io.hpp"
#include "dictex/parallel.hpp"

namespace dictex::genpipe {

using nlohmann::json;

std::string_view to_string(Batching b) { return b == Batching::kBatched ? "batched" : "one_by_one"; }

std::string_view to_string(InputMode m) {
  switch (m) {
    case InputMode::kPosAndDef: return "pos_and_def";
    case InputMode::kDefOnly: return "def_only";
    case InputMode::kPosOnly: return "pos_only";
  }
  return "pos_and_def";
}

Batching parse_batching(std::string_view s) {
  if (s == "one_by_one") return Batching::kOneByOne;
  if (s == "batched") return Batching::kBatched;
  throw Error(ErrorCode::kConfig, "unknown batching '" + std::string(s) + "'");
}

InputMode parse_input_mode(std::string_view s) {
  if (s == "pos_and_def") return InputMode::kPosAndDef;
  if (s == "def_only") return InputMode::kDefOnly;
  if (s == "pos_only") return InputMode::kPosOnly;
  throw Error(ErrorCode::kConfig, "unknown inputs mode '" + std::string(s) + "'");
}

void GenConfig::validate() const {
  if (num_sentences < 1 || num_sentences > 5) throw Error(ErrorCode::kConfig, "num_sentences must be in 1..5");
  if (max_retries < 0) throw Error(ErrorCode::kConfig, "max_retries must be >= 0");
  params.validate();
}

namespace {

constexpr std::string_view kBuiltinTemplate =
    R"(Using the definition and part-of-speech provided in tags, construct {count} that illustrates the definition of the given word within the sentence provided. Go straight to the answer with no introduction.

Here are examples:
Using the definition and part-of-speech provided in tags, construct one sentence that illustrates the definition of the word "airstrip" within the sentence provided. Go straight to the answer with no introduction.
<definition>
a strip of ground set aside for the take-off and landing of aircraft.
</definition>
<part-of-speech>
Noun
</part-of-speech>
Assistant:
<sentence>The site has its own airstrip and light aircraft service, and its own small marina.
</sentence>


Human:
Using the definition and part-of-speech provided in tags, construct {count} that illustrates the definition of the word "{word}" within the sentence provided. Go straight to the answer with no introduction.
{?definition}<definition>
{definition}
</definition>
{/definition}{?pos}<part-of-speech>
{pos}
</part-of-speech>
{/pos}
)";

// Keeps or drops every {?name}...{/name} block.
void resolve_block(std::string& text, std::string_view name, bool keep) {
  const std::string open = "{?" + std::string(name) + "}";
  const std::string close = "{/" + std::string(name) + "}";
  for (auto at = text.find(open); at != std::string::npos; at = text.find(open, at)) {
    auto end = text.find(close, at);
    if (end == std::string::npos) throw Error(ErrorCode::kTemplate, "unterminated block " + open);
    if (keep) {
      text.erase(end, close.size());
      text.erase(at, open.size());
    } else {
      text.erase(at, end + close.size() - at);
    }
  }
}

std::string display_pos(std::string_view pos) {
  std::string out(pos);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  if (text_.find("{word}") == std::string::npos) throw Error(ErrorCode::kTemplate, "generation template lacks {word}");
  for (std::string_view block : {"definition", "pos"}) {
    const auto opens = text_.find("{?" + std::string(block) + "}") != std::string::npos;
    const auto closes = text_.find("{/" + std::string(block) + "}") != std::string::npos;
    if (opens != closes) throw Error(ErrorCode::kTemplate, "unbalanced {?" + std::string(block) + "} block");
  }
}

PromptTemplate PromptTemplate::builtin() { return PromptTemplate(std::string(kBuiltinTemplate)); }

PromptTemplate PromptTemplate::from_file(const std::string& path) { return PromptTemplate(read_file(path)); }

std::string PromptTemplate::render(const corpus::WordSense& sense, const GenConfig& config) const {
  std::string out = text_;
  resolve_block(out, "definition", config.inputs != InputMode::kPosOnly);
  resolve_block(out, "pos", config.inputs != InputMode::kDefOnly);
  const std::string count = config.batching == Batching::kBatched
                                ? std::to_string(config.num_sentences) + " sentences"
                                : std::string("one sentence");
  return render_placeholders(out, {{"count", count},
                                   {"definition", sense.definition},
                                   {"pos", display_pos(sense.pos)},
                                   {"word", sense.surface_word}});
}

std::string build_generation_prompt(const corpus::WordSense& sense, const GenConfig& config) {
  static const PromptTemplate kTemplate = PromptTemplate::builtin();
  return kTemplate.render(sense, config);
}

std::vector<std::string> parse_generation_response(std::string_view raw) {
  static constexpr std::string_view kOpen = "<sentence>";
  static constexpr std::string_view kClose = "</sentence>";
  std::vector<std::string> out;
  std::size_t at = 0;
  while ((at = raw.find(kOpen, at)) != std::string_view::npos) {
    const auto start = at + kOpen.size();
    const auto end = raw.find(kClose, start);
    if (end == std::string_view::npos) break;
    // A second opening tag before the close means the first pair is broken.
    const auto reopen = raw.find(kOpen, start);
    if (reopen != std::string_view::npos && reopen < end) {
      at = reopen;
      continue;
    }
    auto body = trim(raw.substr(start, end - start));
    if (!body.empty()) out.emplace_back(body);
    at = end + kClose.size();
  }
  return out;
}

CandidateSet generate_candidates(const corpus::WordSense& sense, const GenConfig& config,
                                 backends::ChatBackend& backend, const PromptTemplate& prompt_template,
                                 const Sleeper& sleep) {
  config.validate();
  CandidateSet set;
  set.word_sense_id = sense.id;
  const auto wanted = static_cast<std::size_t>(config.num_sentences);
  const auto failure_budget = static_cast<std::size_t>(config.max_retries);
  const auto prompt = prompt_template.render(sense, config);

  auto abandon = [&](std::string why) {
    set.candidates.assign(wanted, std::string());
    set.imputed = true;
    set.diagnostic = std::move(why);
  };

  while (set.candidates.size() < wanted) {
    if (set.failures > failure_budget) {
      abandon("gave up after " + std::to_string(set.failures) + " failed attempts");
      return set;
    }
    ++set.attempts;
    auto response = with_backoff([&] { return backend.complete(prompt, config.params); }, config.backoff, sleep,
                                 set.transport_retries);
    if (!response) {
      const auto& err = response.error();
      if (err.transient() || err.kind == backends::BackendErrorKind::kInvalidRequest) {
        abandon(std::string(backends::to_string(err.kind)) + ": " + err.message);
        return set;
      }
      ++set.failures;
      continue;
    }
    auto sentences = parse_generation_response(response.value());
    if (config.batching == Batching::kOneByOne) {
      if (sentences.empty()) {
        ++set.failures;
        continue;
      }
      set.candidates.push_back(std::move(sentences.front()));
    } else {
      if (sentences.size() < wanted) {
        ++set.failures;
        continue;
      }
      sentences.resize(wanted);
      set.candidates = std::move(sentences);
    }
  }
  return set;
}

CandidateSet generate_candidates(const corpus::WordSense& sense, const GenConfig& config,
                                 backends::ChatBackend& backend) {
  static const PromptTemplate kTemplate = PromptTemplate::builtin();
  return generate_candidates(sense, config, backend, kTemplate);
}

std::vector<CandidateSet> generate_all(const std::vector<corpus::WordSense>& senses, const GenConfig& config,
                                       backends::ChatBackend& backend, const PromptTemplate& prompt,
                                       std::size_t concurrency, const Sleeper& sleep) {
  std::vector<CandidateSet> out(senses.size());
  parallel_for(senses.size(), concurrency,
               [&](std::size_t i) { out[i] = generate_candidates(senses[i], config, backend, prompt, sleep); });
  return out;
}

json to_json(const CandidateSet& set) {
  json j{{"word_sense_id", set.word_sense_id},
         {"candidates", set.candidates},
         {"attempts", set.attempts},
         {"failures", set.failures},
         {"transport_retries", set.transport_retries},
         {"imputed", set.imputed}};
  if (!set.diagnostic.empty()) j["diagnostic"] = set.diagnostic;
  return j;
}

CandidateSet candidate_set_from_json(const json& j) {
  CandidateSet set;
  set.word_sense_id = j.at("word_sense_id").get<std::string>();
  set.candidates = j.at("candidates").get<std::vector<std::string>>();
  set.attempts = j.value("attempts", std::size_t{0});
  set.failures = j.value("failures", std::size_t{0});
  set.transport_retries = j.value("transport_retries", std::size_t{0});
  set.imputed = j.value("imputed", false);
  set.diagnostic = j.value("diagnostic", "");
  return set;
}

}  // namespace dictex::genpipe
