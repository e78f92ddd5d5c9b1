#include "dictex/mock_backends.hpp"

#include <cctype>
#include <cmath>

#include "dictex/error.hpp"
#include "dictex/hashing.hpp"

namespace dictex::backends {

using nlohmann::json;

namespace {

BackendError invalid_prompt() { return {BackendErrorKind::kInvalidRequest, "empty prompt", std::nullopt, 0}; }

BackendErrorKind parse_error_kind(const std::string& name) {
  if (name == "timeout") return BackendErrorKind::kTimeout;
  if (name == "rate_limited") return BackendErrorKind::kRateLimited;
  if (name == "refusal") return BackendErrorKind::kRefusal;
  if (name == "transport") return BackendErrorKind::kTransport;
  if (name == "vocabulary_mismatch") return BackendErrorKind::kVocabularyMismatch;
  if (name == "invalid_request") return BackendErrorKind::kInvalidRequest;
  throw Error(ErrorCode::kConfig, "unknown backend error kind '" + name + "'");
}

}  // namespace

ScriptedChatBackend::ScriptedChatBackend(std::vector<ScriptStep> steps, std::string name)
    : steps_(std::move(steps)), name_(std::move(name)) {
  if (steps_.empty()) throw Error(ErrorCode::kConfig, "chat script has no steps");
}

std::unique_ptr<ScriptedChatBackend> ScriptedChatBackend::from_json(const json& script) {
  std::vector<ScriptStep> steps;
  for (const auto& s : script.at("steps")) {
    ScriptStep step;
    if (s.contains("text")) {
      step.text = s.at("text").get<std::string>();
    } else {
      BackendError err;
      err.kind = parse_error_kind(s.at("error").get<std::string>());
      err.message = s.value("message", "scripted failure");
      if (s.contains("retry_after_ms")) err.retry_after = std::chrono::milliseconds(s.at("retry_after_ms").get<int>());
      step.error = err;
    }
    steps.push_back(std::move(step));
  }
  return std::make_unique<ScriptedChatBackend>(std::move(steps), script.value("name", "mock-scripted"));
}

Expected<std::string> ScriptedChatBackend::complete(std::string_view prompt, const GenParams&) {
  if (prompt.empty()) return invalid_prompt();
  std::lock_guard lock(mutex_);
  const auto& step = steps_[std::min(prompts_.size(), steps_.size() - 1)];
  prompts_.emplace_back(prompt);
  if (step.error) return *step.error;
  return *step.text;
}

std::size_t ScriptedChatBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return prompts_.size();
}

std::vector<std::string> ScriptedChatBackend::prompts() const {
  std::lock_guard lock(mutex_);
  return prompts_;
}

RuleChatBackend::RuleChatBackend(Rule rule, std::string name) : rule_(std::move(rule)), name_(std::move(name)) {}

Expected<std::string> RuleChatBackend::complete(std::string_view prompt, const GenParams&) {
  if (prompt.empty()) return invalid_prompt();
  std::size_t nth = 0;
  {
    std::lock_guard lock(mutex_);
    nth = seen_[std::string(prompt)]++;
    ++calls_;
  }
  return rule_(prompt, nth);
}

std::size_t RuleChatBackend::call_count() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

namespace {

std::string requested_word(std::string_view prompt) {
  static constexpr std::string_view kMarker = "the word \"";
  auto at = prompt.rfind(kMarker);
  if (at == std::string_view::npos) return {};
  auto start = at + kMarker.size();
  auto end = prompt.find('"', start);
  if (end == std::string_view::npos) return {};
  return std::string(prompt.substr(start, end - start));
}

std::size_t requested_count(std::string_view prompt) {
  auto human = prompt.rfind("Human:");
  auto task = human == std::string_view::npos ? prompt : prompt.substr(human);
  static constexpr std::string_view kConstruct = "construct ";
  auto at = task.find(kConstruct);
  if (at == std::string_view::npos) return 1;
  std::size_t n = 0;
  for (auto i = at + kConstruct.size(); i < task.size() && std::isdigit(static_cast<unsigned char>(task[i])); ++i) {
    n = n * 10 + static_cast<std::size_t>(task[i] - '0');
  }
  return n == 0 ? 1 : n;
}

}  // namespace

std::unique_ptr<RuleChatBackend> make_tagged_generator(double refusal_rate, std::uint64_t seed,
                                                       std::set<std::string> refused_words) {
  auto rule = [refusal_rate, seed, refused = std::move(refused_words)](std::string_view prompt,
                                                                      std::size_t nth) -> Expected<std::string> {
    const auto word = requested_word(prompt);
    const auto h = splitmix64(fnv1a64(prompt, seed) ^ splitmix64(nth));
    if (refused.contains(word) || unit_interval(h) < refusal_rate) {
      return BackendError{BackendErrorKind::kRefusal, "declined", std::nullopt, 0};
    }
    static constexpr const char* kFrames[] = {
        "Everyone in the village agreed that {} was the right word for it.",
        "She paused for a moment and then used {} to describe the scene.",
        "In the old story, the {} carried a meaning the children understood.",
        "After a long day at work, he finally understood what {} meant.",
        "The teacher wrote {} on the board and asked for a simple example.",
    };
    std::string out;
    const auto count = requested_count(prompt);
    for (std::size_t k = 0; k < count; ++k) {
      std::string frame = kFrames[(splitmix64(h + k) >> 7) % std::size(kFrames)];
      frame.replace(frame.find("{}"), 2, word);
      out += "<sentence>" + frame + "</sentence>\n";
    }
    return out;
  };
  return std::make_unique<RuleChatBackend>(std::move(rule), "mock-tagged");
}

std::unique_ptr<RuleChatBackend> make_constant_judge(std::string reply) {
  return std::make_unique<RuleChatBackend>(
      [reply = std::move(reply)](std::string_view, std::size_t) -> Expected<std::string> { return reply; },
      "mock-constant");
}

MlmScript MlmScript::from_json(const json& j) {
  MlmScript s;
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.max_length = j.value("max_length", s.max_length);
  s.space_marker = j.value("space_marker", s.space_marker);
  s.default_prob = j.value("default_prob", s.default_prob);
  if (j.contains("pieces")) s.pieces = j.at("pieces").get<std::map<std::string, std::vector<std::string>>>();
  if (j.contains("vocab")) s.vocab = j.at("vocab").get<std::map<std::string, std::int64_t>>();
  if (j.contains("probs")) s.probs = j.at("probs").get<std::map<std::string, double>>();
  if (j.contains("contextual_seed")) {
    // Deterministic pseudo-probability of each target given its whole context.
    const auto seed = j.at("contextual_seed").get<std::uint64_t>();
    s.prob_fn = [seed](const MaskQuery& q, std::size_t k) {
      auto h = splitmix64(seed ^ q.mask_positions[k]);
      for (auto id : q.token_ids) h = splitmix64(h ^ static_cast<std::uint64_t>(id));
      h = splitmix64(h ^ static_cast<std::uint64_t>(q.target_ids[k]));
      return 0.05 + 0.95 * unit_interval(h);
    };
  }
  return s;
}

ScriptedMlmBackend::ScriptedMlmBackend(MlmScript script, std::string name)
    : script_(std::move(script)), name_(std::move(name)) {
  if (script_.vocab_size < 8) throw Error(ErrorCode::kConfig, "mock vocabulary too small");
  for (const auto& [word, pieces] : script_.pieces) {
    std::string joined;
    for (const auto& p : pieces) joined += p;
    if (joined != word || pieces.empty()) throw Error(ErrorCode::kConfig, "pieces for '" + word + "' do not spell it");
  }
  for (const auto& [token, id] : script_.vocab) id_to_token_[id] = token;
}

std::int64_t ScriptedMlmBackend::token_id(const std::string& token) const {
  std::lock_guard lock(mutex_);
  return token_id_locked(token);
}

std::int64_t ScriptedMlmBackend::token_id_locked(const std::string& token) const {
  if (auto it = script_.vocab.find(token); it != script_.vocab.end()) return it->second;
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  // Ids 0-3 are reserved; the top id is the mask.
  const auto span = static_cast<std::uint64_t>(script_.vocab_size - 5);
  auto slot = splitmix64(fnv1a64(token)) % span;
  for (;;) {
    const auto id = 4 + static_cast<std::int64_t>(slot);
    auto [it, inserted] = id_to_token_.try_emplace(id, token);
    if (inserted || it->second == token) {
      token_to_id_[token] = id;
      return id;
    }
    slot = (slot + 1) % span;
  }
}

Expected<TokenizedText> ScriptedMlmBackend::tokenize(std::string_view text, bool leading_space) {
  TokenizedText out;
  std::lock_guard lock(mutex_);
  ++tokenize_calls_;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const auto start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::string word(text.substr(start, i - start));
    const bool spaced = start > 0 || leading_space;

    std::vector<std::string> pieces{word};
    if (auto it = script_.pieces.find(word); it != script_.pieces.end()) pieces = it->second;
    std::size_t offset = start;
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      const auto token = (p == 0 && spaced) ? script_.space_marker + pieces[p] : pieces[p];
      const auto id = token_id_locked(token);
      id_to_token_[id] = token;
      out.token_ids.push_back(id);
      out.offsets.emplace_back(offset, offset + pieces[p].size());
      offset += pieces[p].size();
    }
  }
  return out;
}

Expected<MaskScores> ScriptedMlmBackend::mask_score(const MaskQuery& query) {
  if (auto problem = validate_query(query, mask_token_id())) {
    return BackendError{BackendErrorKind::kInvalidRequest, *problem, std::nullopt, 0};
  }
  std::lock_guard lock(mutex_);
  ++forward_passes_;
  MaskScores out;
  for (std::size_t k = 0; k < query.target_ids.size(); ++k) {
    const auto target = query.target_ids[k];
    if (target < 0 || target >= script_.vocab_size) {
      return BackendError{BackendErrorKind::kVocabularyMismatch, "target id " + std::to_string(target) + " out of range",
                          std::nullopt, 0};
    }
    double p = script_.default_prob;
    if (script_.prob_fn) {
      p = script_.prob_fn(query, k);
    } else if (auto tok = id_to_token_.find(target); tok != id_to_token_.end()) {
      auto hit = script_.probs.find(tok->second);
      if (hit == script_.probs.end() && tok->second.starts_with(script_.space_marker)) {
        hit = script_.probs.find(tok->second.substr(script_.space_marker.size()));
      }
      if (hit != script_.probs.end()) p = hit->second;
    }
    out.logprobs.push_back(std::log(p));
  }
  return out;
}

std::size_t ScriptedMlmBackend::tokenize_calls() const {
  std::lock_guard lock(mutex_);
  return tokenize_calls_;
}

std::size_t ScriptedMlmBackend::forward_passes() const {
  std::lock_guard lock(mutex_);
  return forward_passes_;
}

}  // namespace dictex::backends
