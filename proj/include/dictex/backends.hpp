#pragma once

// Contracts for text-generation (chat) and masked-language-model backends.
// Failures are returned as values so callers own the retry policy.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace dictex::backends {

enum class BackendErrorKind {
  kTimeout,
  kRateLimited,
  kRefusal,
  kTransport,
  kVocabularyMismatch,
  kInvalidRequest,
};

std::string_view to_string(BackendErrorKind kind);

struct BackendError {
  BackendErrorKind kind = BackendErrorKind::kTransport;
  std::string message;
  std::optional<std::chrono::milliseconds> retry_after;
  int http_status = 0;

  /// Timeout, RateLimited and Transport are worth retrying with backoff.
  [[nodiscard]] bool transient() const noexcept;
};

template <typename T>
class Expected {
 public:
  Expected(T value) : state_(std::move(value)) {}             // NOLINT(google-explicit-constructor)
  Expected(BackendError error) : state_(std::move(error)) {}  // NOLINT(google-explicit-constructor)

  [[nodiscard]] bool has_value() const noexcept { return state_.index() == 0; }
  explicit operator bool() const noexcept { return has_value(); }

  T& value() & { return std::get<0>(state_); }
  const T& value() const& { return std::get<0>(state_); }
  T&& value() && { return std::get<0>(std::move(state_)); }
  const BackendError& error() const { return std::get<1>(state_); }

  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  std::variant<T, BackendError> state_;
};

struct GenParams {
  double temperature = 0.9;
  double top_p = 1.0;
  int top_k = 500;
  int max_tokens = 256;

  /// Throws Error(kConfig) when a field is out of range.
  void validate() const;
};

struct TokenizedText {
  std::vector<std::int64_t> token_ids;
  // Half-open [first, second) character spans into the tokenized text.
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
};

struct MaskQuery {
  std::vector<std::int64_t> token_ids;
  std::vector<std::size_t> mask_positions;
  std::vector<std::int64_t> target_ids;
};

struct MaskScores {
  std::vector<double> logprobs;
};

/// Checks the MaskQuery invariants against `mask_id`; returns a description of
/// the first violation.
std::optional<std::string> validate_query(const MaskQuery& query, std::int64_t mask_id);

struct RequestStats {
  std::uint64_t requests = 0;
  std::uint64_t failures = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::chrono::milliseconds total_latency{0};
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// Raw completion text for `prompt`. An empty prompt is a precondition
  /// violation (kInvalidRequest), never sent.
  virtual Expected<std::string> complete(std::string_view prompt, const GenParams& params) = 0;

  /// Identifier recorded in run manifests.
  [[nodiscard]] virtual std::string identifier() const = 0;
};

class MlmBackend {
 public:
  virtual ~MlmBackend() = default;

  /// `leading_space` marks the fragment as a mid-sentence continuation.
  virtual Expected<TokenizedText> tokenize(std::string_view text, bool leading_space) = 0;

  /// Log-probabilities of each target id at its mask position, one forward pass.
  virtual Expected<MaskScores> mask_score(const MaskQuery& query) = 0;

  [[nodiscard]] virtual std::int64_t mask_token_id() const = 0;

  /// Longest token sequence (excluding special tokens) the model accepts.
  [[nodiscard]] virtual std::size_t max_sequence_length() const = 0;

  [[nodiscard]] virtual std::string identifier() const = 0;
};

}  // namespace dictex::backends
