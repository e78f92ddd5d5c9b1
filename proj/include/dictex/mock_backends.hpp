#pragma once

// Deterministic offline backends driven by declarative scripts.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"

namespace dictex::backends {

struct ScriptStep {
  std::optional<std::string> text;
  std::optional<BackendError> error;
};

/// Replays canned responses in call order, repeating the final step once the
/// script is exhausted.
class ScriptedChatBackend final : public ChatBackend {
 public:
  explicit ScriptedChatBackend(std::vector<ScriptStep> steps, std::string name = "mock-scripted");

  /// {"steps": [{"text": "..."} | {"error": "rate_limited", "retry_after_ms": 10}, ...]}
  static std::unique_ptr<ScriptedChatBackend> from_json(const nlohmann::json& script);

  Expected<std::string> complete(std::string_view prompt, const GenParams& params) override;
  [[nodiscard]] std::string identifier() const override { return name_; }

  [[nodiscard]] std::size_t call_count() const;
  [[nodiscard]] std::vector<std::string> prompts() const;

 private:
  std::vector<ScriptStep> steps_;
  std::string name_;
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
};

/// Response is a pure function of (prompt, how many times this prompt was seen
/// before), so results are reproducible under any thread interleaving.
class RuleChatBackend final : public ChatBackend {
 public:
  using Rule = std::function<Expected<std::string>(std::string_view prompt, std::size_t nth)>;

  RuleChatBackend(Rule rule, std::string name);

  Expected<std::string> complete(std::string_view prompt, const GenParams& params) override;
  [[nodiscard]] std::string identifier() const override { return name_; }

  [[nodiscard]] std::size_t call_count() const;

 private:
  Rule rule_;
  std::string name_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::size_t> seen_;
  std::size_t calls_ = 0;
};

/// Generator mock: answers each generation prompt with tagged sentences that
/// contain the requested word. A `refusal_rate` fraction of calls is refused
/// at random; words in `refused_words` are refused every time.
std::unique_ptr<RuleChatBackend> make_tagged_generator(double refusal_rate, std::uint64_t seed,
                                                       std::set<std::string> refused_words = {});

/// Judge mock that always returns `reply`.
std::unique_ptr<RuleChatBackend> make_constant_judge(std::string reply);

struct MlmScript {
  std::int64_t vocab_size = 50000;
  std::size_t max_length = 510;
  std::string space_marker = "\xC4\xA0";  // U+0120, as in byte-level BPE vocabularies
  // Words that split into several pieces; pieces must concatenate to the word.
  std::map<std::string, std::vector<std::string>> pieces;
  // Fixed ids for token strings (marker included). Unlisted tokens get a
  // stable hashed id.
  std::map<std::string, std::int64_t> vocab;
  // Target probability by token string; lookups try the exact token, then the
  // token without its space marker.
  std::map<std::string, double> probs;
  double default_prob = 1.0;
  // Optional contextual override; returns a probability in (0, 1].
  std::function<double(const MaskQuery&, std::size_t mask_index)> prob_fn;

  static MlmScript from_json(const nlohmann::json& j);
};

/// Whitespace tokenizer plus table-driven target probabilities.
class ScriptedMlmBackend final : public MlmBackend {
 public:
  explicit ScriptedMlmBackend(MlmScript script, std::string name = "mock-mlm");

  Expected<TokenizedText> tokenize(std::string_view text, bool leading_space) override;
  Expected<MaskScores> mask_score(const MaskQuery& query) override;

  [[nodiscard]] std::int64_t mask_token_id() const override { return script_.vocab_size - 1; }
  [[nodiscard]] std::size_t max_sequence_length() const override { return script_.max_length; }
  [[nodiscard]] std::string identifier() const override { return name_; }

  [[nodiscard]] std::size_t tokenize_calls() const;
  [[nodiscard]] std::size_t forward_passes() const;
  // Stable hashed id per token string; collisions are resolved by probing so
  // distinct strings never share an id.
  [[nodiscard]] std::int64_t token_id(const std::string& token) const;

 private:
  std::int64_t token_id_locked(const std::string& token) const;

  MlmScript script_;
  std::string name_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::int64_t, std::string> id_to_token_;
  mutable std::unordered_map<std::string, std::int64_t> token_to_id_;
  std::size_t tokenize_calls_ = 0;
  std::size_t forward_passes_ = 0;
};

}  // namespace dictex::backends
