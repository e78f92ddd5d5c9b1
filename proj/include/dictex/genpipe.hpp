#pragma once

// Candidate sentence generation: prompt construction, response parsing, and
// the retry / imputation policy around a chat backend.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"
#include "dictex/corpus.hpp"
#include "dictex/retry.hpp"

namespace dictex::genpipe {

enum class Batching { kOneByOne, kBatched };
enum class InputMode { kPosAndDef, kDefOnly, kPosOnly };

std::string_view to_string(Batching b);
std::string_view to_string(InputMode m);
Batching parse_batching(std::string_view s);
InputMode parse_input_mode(std::string_view s);

struct GenConfig {
  int num_sentences = 5;
  Batching batching = Batching::kOneByOne;
  InputMode inputs = InputMode::kPosAndDef;
  int max_retries = 10;
  backends::GenParams params;
  BackoffPolicy backoff;

  void validate() const;
};

struct CandidateSet {
  std::string word_sense_id;
  std::vector<std::string> candidates;
  std::size_t attempts = 0;           // generation requests, one per logical try
  std::size_t failures = 0;           // format failures and refusals
  std::size_t transport_retries = 0;  // backoff re-issues, not counted in attempts
  bool imputed = false;
  std::string diagnostic;

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

/// Prompt template with placeholders {word}, {definition}, {pos}, {count}.
/// Optional blocks are wrapped as {?definition}...{/definition} and
/// {?pos}...{/pos}; they are dropped when the input mode excludes them.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text);

  static PromptTemplate builtin();
  static PromptTemplate from_file(const std::string& path);

  [[nodiscard]] std::string render(const corpus::WordSense& sense, const GenConfig& config) const;
  [[nodiscard]] const std::string& text() const { return text_; }

 private:
  std::string text_;
};

std::string build_generation_prompt(const corpus::WordSense& sense, const GenConfig& config);

/// Trimmed, non-empty contents of every <sentence>...</sentence> pair, in order.
std::vector<std::string> parse_generation_response(std::string_view raw);

/// Accumulates config.num_sentences sentences (one request each, or one
/// request for all in batched mode). After config.max_retries cumulative
/// failures, or a transport failure that outlives backoff, the sense is
/// abandoned: every slot is blank and imputed is set.
CandidateSet generate_candidates(const corpus::WordSense& sense, const GenConfig& config,
                                 backends::ChatBackend& backend, const PromptTemplate& prompt,
                                 const Sleeper& sleep = real_sleeper());

CandidateSet generate_candidates(const corpus::WordSense& sense, const GenConfig& config,
                                 backends::ChatBackend& backend);

/// Generates for every sense with up to `concurrency` requests in flight.
/// Output order follows `senses`.
std::vector<CandidateSet> generate_all(const std::vector<corpus::WordSense>& senses, const GenConfig& config,
                                       backends::ChatBackend& backend, const PromptTemplate& prompt,
                                       std::size_t concurrency, const Sleeper& sleep = real_sleeper());

nlohmann::json to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const nlohmann::json& j);

}  // namespace dictex::genpipe
